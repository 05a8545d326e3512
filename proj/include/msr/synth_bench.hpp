// Synthetic weakly labeled corpora: Gaussian class clusters labeled by
// halfspace rules. Feature-dependent noise tilts each rule towards a nuisance
// direction so that its mistakes are a function of x; uniform noise keeps the
// rule on the class direction and corrupts the emitted label at random.
#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "msr/weak_data.hpp"

namespace msr {

enum class NoiseStyle { FeatureDependent, Uniform };

std::string_view noise_style_name(NoiseStyle style);
std::optional<NoiseStyle> parse_noise_style(std::string_view name);

struct SynthSpec {
  std::size_t classes = 4;
  std::size_t dim = 16;
  std::size_t samples = 4000;
  double separation = 4.0;
  std::size_t sources = 4;
  // One entry per source, or a single entry applied to every source.
  std::vector<double> coverage{0.2};
  std::vector<double> error_rate{0.3};
  NoiseStyle style = NoiseStyle::FeatureDependent;
  // When set, per-source error rates are replaced by a shared rule tilt
  // calibrated so the aggregated label noise over D_w hits this value.
  std::optional<double> target_noise;
  std::uint64_t seed = 0;

  double coverage_for(std::size_t source) const;
  double error_rate_for(std::size_t source) const;
  void validate() const;

  nlohmann::ordered_json to_json() const;
  static SynthSpec from_json(const nlohmann::ordered_json& j);
};

class InfeasibleSpec : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

WeakDataset generate(const SynthSpec& spec);

struct SourceReport {
  double coverage = 0.0;             // fraction of train rows where it fires
  std::optional<double> precision;   // over fired train rows with gold
};

struct Description {
  CorpusStats stats;
  std::vector<SourceReport> sources;

  nlohmann::ordered_json to_json() const;
};

Description describe(const WeakDataset& ds);

nlohmann::ordered_json stats_to_json(const CorpusStats& stats);

}  // namespace msr
