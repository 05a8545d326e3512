// Training procedures: teacher initialization on weak labels, the
// meta-self-refining teacher/student loop, and the FT-WL / FT-WLST baselines.
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "msr/classifier.hpp"
#include "msr/optimizers.hpp"
#include "msr/weak_data.hpp"

namespace msr {

struct TrainConfig {
  double student_rate = 2e-5;   // lambda_s: student AdamW and virtual SGD step
  double teacher_rate = 2e-5;   // lambda_t: target of the teacher ramp
  double init_rate = 2e-5;      // teacher_init and FT-WL
  std::int64_t steps = 1000;    // T
  std::int64_t init_steps = 1000;
  double tau = 0.5;
  std::size_t batch = 32;
  std::size_t valid_batch = 32;
  std::int64_t warmup = 500;
  std::uint64_t seed = 0;
  bool use_scheduler = true;
  bool use_filter = true;
  std::int64_t patience = 0;    // evaluations without improvement; 0 = never stop early
  std::int64_t eval_every = 50;
  std::vector<std::size_t> hidden{32};
  double weight_decay = 0.01;
  bool soft_pseudo_labels = false;  // FT-WLST targets

  // tau may exceed 1 (the filter then rejects everything).
  void validate() const;
  Architecture architecture(const WeakDataset& ds) const;
  nlohmann::ordered_json to_json() const;
  static TrainConfig from_json(const nlohmann::ordered_json& j);
};

class TrainingError : public std::runtime_error {
 public:
  TrainingError(std::int64_t step, const std::string& what)
      : std::runtime_error("step " + std::to_string(step) + ": " + what), step_(step) {}
  std::int64_t step() const { return step_; }

 private:
  std::int64_t step_;
};

struct SplitAccuracy {
  std::optional<double> train;  // over D_a rows with gold
  double valid = 0.0;
  double test = 0.0;
};

struct EvalPoint {
  std::int64_t step = 0;
  SplitAccuracy student;
  std::optional<SplitAccuracy> teacher;
  double keep_rate = 1.0;  // mean filter keep-rate since the previous evaluation
};

struct TrainReport {
  std::string method;
  TrainConfig config;
  std::vector<EvalPoint> trace;
  std::int64_t steps_run = 0;
  std::int64_t best_step = 0;
  EvalPoint best;
  std::vector<double> keep_trace;  // per step
  ParamSet student_final;
  ParamSet student_best;
  std::optional<ParamSet> teacher_final;
  std::optional<ParamSet> teacher_best;
  std::optional<AdamWState> student_optimizer;
  std::optional<AdamWState> teacher_optimizer;
  double wall_seconds = 0.0;

  // Without wall-clock time unless `timing` is set.
  nlohmann::ordered_json to_json(bool timing = false) const;
};

// Per-stream generators derived from a run seed.
enum class RngStream : std::uint64_t {
  TeacherInit = 1,
  StudentInit,
  TrainBatches,
  ValidBatches,
  InitBatches,
  TieBreak,
};
std::mt19937_64 make_rng(std::uint64_t seed, RngStream stream);

// Shuffled passes over a fixed index list; reshuffles at every epoch.
class EpochSampler {
 public:
  EpochSampler(std::vector<std::size_t> pool, std::mt19937_64 rng);
  std::vector<std::size_t> next(std::size_t count);

 private:
  std::vector<std::size_t> pool_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::mt19937_64 rng_;
};

// Probabilities from parameters and a batch of features.
using ModelFn = std::function<ad::Tensor(const ParamSet&, const ad::Tensor&)>;

struct MetaGradient {
  std::vector<ad::Tensor> teacher_grad;
  double validation_loss = 0.0;  // CE(one-hot y_v, g~'(x_v))
};

// Teaching experiment: g~' = g - rate * grad_g CE(f(x), g(x)) kept on the
// tape, then the gradient of CE(y_v, g~'(x_v)) wrt the teacher parameters.
MetaGradient teacher_meta_gradient(const ParamSet& teacher, const ParamSet& student,
                                   const ad::Tensor& x, const ad::Tensor& x_valid,
                                   const ad::Tensor& y_valid, double rate,
                                   const ModelFn& teacher_model = forward,
                                   const ModelFn& student_model = forward);

// CE(y_v, g~'(x_v)) after re-simulating the virtual step without a graph on
// the teacher.
double virtual_validation_loss(const ParamSet& teacher, const ParamSet& student,
                               const ad::Tensor& x, const ad::Tensor& x_valid,
                               const ad::Tensor& y_valid, double rate,
                               const ModelFn& teacher_model = forward,
                               const ModelFn& student_model = forward);

// Accuracy of `params` against gold over `rows`; nullopt when none has gold.
std::optional<double> accuracy(const ParamSet& params, const WeakDataset& ds,
                               std::span<const std::size_t> rows);

// Supervised training on the hard aggregated labels of D_w with early
// stopping; returns the best-validation checkpoint.
ParamSet teacher_init(const WeakDataset& ds, const TrainConfig& cfg);

TrainReport msr_train(const WeakDataset& ds, const ParamSet& initial_teacher,
                      const TrainConfig& cfg);
TrainReport ft_wl(const WeakDataset& ds, const TrainConfig& cfg);
TrainReport ft_wlst(const WeakDataset& ds, const ParamSet& teacher, const TrainConfig& cfg);

}  // namespace msr
