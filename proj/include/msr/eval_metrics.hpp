// Evaluation: accuracy, error decomposition against weak labels,
// confidence-threshold curves and hidden-representation export.
#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "msr/classifier.hpp"
#include "msr/weak_data.hpp"

namespace msr {

// y' = prediction, y^ = weak label, y = gold.
//   robust:           y' = y,  y^ != y
//   type A:           y' = y^, y^ != y
//   type B:           y' != y^, y' != y, y^ != y
//   correct on clean: y' = y,  y^ = y
//   type C:           y' != y, y^ = y
// Rates divide the first three by count(y^ != y) and the last two by
// count(y^ = y). Rows without a weak label are counted in `no_weak` only.
struct ErrorDecomposition {
  std::size_t rows = 0;
  std::size_t no_weak = 0;
  std::size_t weak_wrong = 0;
  std::size_t weak_right = 0;
  std::size_t robust = 0;
  std::size_t type_a = 0;
  std::size_t type_b = 0;
  std::size_t correct_on_clean = 0;
  std::size_t type_c = 0;

  std::optional<double> rate(std::size_t count, bool wrong_branch) const;
  std::optional<double> robust_rate() const { return rate(robust, true); }
  std::optional<double> type_a_rate() const { return rate(type_a, true); }
  std::optional<double> type_b_rate() const { return rate(type_b, true); }
  std::optional<double> correct_on_clean_rate() const { return rate(correct_on_clean, false); }
  std::optional<double> type_c_rate() const { return rate(type_c, false); }

  nlohmann::ordered_json to_json() const;
  void write_csv(std::ostream& out) const;
};

ErrorDecomposition error_decomposition(std::span<const int> pred, std::span<const int> weak,
                                       std::span<const int> gold);

double accuracy(std::span<const int> pred, std::span<const int> gold);

struct CurvePoint {
  double tau = 0.0;
  std::size_t kept = 0;
  double keep_rate = 0.0;
  std::optional<double> accuracy;  // nullopt when nothing is kept
};

// For each tau: accuracy over rows with confidence >= tau.
std::vector<CurvePoint> confidence_accuracy_curve(const ad::Tensor& probabilities,
                                                  std::span<const int> gold,
                                                  std::span<const double> thresholds);
void write_curve_csv(std::span<const CurvePoint> curve, std::ostream& out);
nlohmann::ordered_json curve_to_json(std::span<const CurvePoint> curve);

// CSV columns: id,split,h0..h{H-1},pred,confidence,gold (gold empty when
// unknown). H is the width of the last hidden layer, or the input width for
// a model without hidden layers.
void export_representations(const ParamSet& params, const WeakDataset& ds, std::ostream& out);
void export_representations(const ParamSet& params, const WeakDataset& ds,
                            const std::filesystem::path& path);

// Shortest round-tripping decimal form used by every CSV writer.
std::string format_number(double value);

}  // namespace msr
