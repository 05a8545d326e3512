// Weakly supervised datasets: dense features, per-source labels with
// abstention, majority-vote aggregation, splits and corpus statistics.
//
// On-disk format (JSONL, UTF-8). First line is a header, then one record per
// sample:
//   {"k": 4, "d": 16, "S": 8}
//   {"id": "s0", "features": [...d floats], "weak": [...S ints], "gold": 2, "split": "train"}
// -1 in "weak" means the source abstains; "gold" may be null on train rows.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "msr/autodiff.hpp"

namespace msr {

inline constexpr int kAbstain = -1;

enum class Split { Train, Validation, Test };

std::string_view split_name(Split split);
std::optional<Split> parse_split(std::string_view name);

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct WeakDataset {
  std::size_t classes = 0;
  std::size_t dim = 0;
  std::size_t sources = 0;

  std::vector<std::string> ids;
  std::vector<double> features;     // size() x dim, row-major
  std::vector<int> source_labels;   // size() x sources, -1 = abstain
  std::vector<int> weak;            // aggregated label, -1 = no source fired
  std::vector<int> gold;            // -1 = unknown (train rows only)
  std::vector<Split> split;

  std::size_t size() const { return ids.size(); }
  std::span<const double> feature_row(std::size_t i) const;
  std::span<const int> source_row(std::size_t i) const;

  // Sample indices in file order.
  std::vector<std::size_t> indices(Split s) const;
  // D_w: train rows with an aggregated weak label.
  std::vector<std::size_t> weakly_labeled() const;
  // D_u: train rows where every source abstains.
  std::vector<std::size_t> unlabeled() const;

  ad::Tensor feature_matrix(std::span<const std::size_t> rows) const;
  std::vector<int> gold_labels(std::span<const std::size_t> rows) const;
  std::vector<int> weak_labels(std::span<const std::size_t> rows) const;

  // Throws DataError naming the first offending row.
  void validate() const;
};

// Most frequent non-abstaining label; ties broken uniformly with `rng`;
// kAbstain when every entry abstains.
int majority_vote(std::span<const int> row, std::mt19937_64& rng);

// Recomputes ds.weak with a tie-breaking stream seeded by `seed`.
void aggregate_weak_labels(WeakDataset& ds, std::uint64_t seed);

struct CorpusStats {
  std::size_t samples = 0;          // N, all splits
  std::size_t train = 0;            // |D_a|
  std::size_t weakly_labeled = 0;   // |D_w|
  std::size_t unlabeled = 0;        // |D_u|
  std::size_t validation = 0;
  std::size_t test = 0;
  double coverage = 0.0;            // |D_w| / |D_a|
  double conflict = 0.0;            // conflicting rows / |D_a|
  std::vector<std::size_t> weak_histogram;  // per class, over D_w
  std::optional<double> noise_rate;         // over D_w rows with gold
};

// Train-split statistics (coverage, conflict, noise) plus split sizes.
CorpusStats compute_stats(const WeakDataset& ds);

// Reads and validates a JSONL file, then aggregates with seed 0.
WeakDataset load_dataset(const std::filesystem::path& path);
WeakDataset parse_dataset(std::istream& in);
void save_dataset(const WeakDataset& ds, const std::filesystem::path& path);
void write_dataset(const WeakDataset& ds, std::ostream& out);

// Keeps m validation rows chosen uniformly without replacement (file order
// preserved); other splits untouched.
WeakDataset subsample_validation(const WeakDataset& ds, std::size_t m, std::mt19937_64& rng);

}  // namespace msr
