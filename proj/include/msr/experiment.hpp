// Config-driven experiment runner behind the `msr` command line tool.
//
// Config files are flat `key = value` lines; `#` starts a comment. Keys:
//   data.path = corpus.jsonl          (or the data.synth.* keys below)
//   data.synth.{classes,dim,samples,separation,sources,coverage,error_rate,
//               style,target_noise,seed}
//   method = msr | ft-wl | ft-wlst | majority
//   seeds = 0,1,2,3,4                 (ranges like 0-4 also accepted)
//   output = out
//   workers = 1
//   validation.size = 100             (optional validation subsample)
//   eval.thresholds = 0,0.1,...
//   train.{student_rate,teacher_rate,init_rate,steps,init_steps,tau,batch,
//          valid_batch,warmup,use_scheduler,use_filter,patience,eval_every,
//          hidden,weight_decay,soft_pseudo_labels}
// List values are comma separated.
#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "msr/synth_bench.hpp"
#include "msr/train_loops.hpp"

namespace msr {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raw key/value pairs with their source line numbers.
struct KeyValues {
  struct Entry {
    std::string value;
    int line = 0;
  };
  std::string source;
  std::map<std::string, Entry> entries;

  static KeyValues parse(std::istream& in, const std::string& source);
  static KeyValues load(const std::filesystem::path& path);
};

struct ExperimentConfig {
  std::optional<std::filesystem::path> data_path;
  std::optional<SynthSpec> synth;
  std::string method = "msr";
  TrainConfig train;
  std::vector<std::uint64_t> seeds{0};
  std::optional<std::size_t> validation_size;
  std::filesystem::path output = "out";
  std::size_t workers = 1;
  std::vector<double> thresholds{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};

  void validate() const;
  // Settings that affect results; output location and workers are left out.
  nlohmann::ordered_json to_json() const;
};

ExperimentConfig parse_config(const KeyValues& kv);
ExperimentConfig load_config(const std::filesystem::path& path);
SynthSpec parse_synth_spec(const KeyValues& kv);
std::vector<std::uint64_t> parse_seed_list(const std::string& text);

WeakDataset load_experiment_data(const ExperimentConfig& cfg);

struct SeedResult {
  std::uint64_t seed = 0;
  nlohmann::ordered_json metrics;  // flat name -> number or null
};

// Runs cfg.method for every seed. Writes <output>/<method>/<seed>/{report.json,
// decomposition.csv, curve.csv, repr.csv} and <output>/<method>/summary.json.
// Throws ConfigError, DataError or TrainingError.
nlohmann::ordered_json run_experiment(const ExperimentConfig& cfg);
// Base MSR config under the 2x2 scheduler/filter grid; one directory per
// variant plus <output>/summary.json.
nlohmann::ordered_json run_ablation(const ExperimentConfig& cfg);

// Command entry points returning process exit codes:
// 0 success, 1 config or data error, 2 training abort.
int run_command(const ExperimentConfig& cfg);
int ablate_command(const ExperimentConfig& cfg);

// Mean and sample standard deviation of each numeric metric across rows;
// metrics that are null in any row are null.
nlohmann::ordered_json aggregate_metrics(const std::vector<SeedResult>& rows);

}  // namespace msr
