// Update rules: a differentiable SGD step for the virtual student, AdamW for
// real parameter updates, and the teacher's linear learning-rate ramp.

#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "msr/autodiff.hpp"
#include "msr/classifier.hpp"

namespace msr {

// params - rate * d loss / d params, with the gradient taken with
// create_graph so the result stays differentiable wrt anything upstream of
// `loss` (for the virtual student: the teacher parameters). Every tensor of
// `params` must be on the same tape as `loss`.
ParamSet sgd_virtual_step(const ParamSet& params, const ad::Tensor& loss, double rate);

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
};

struct AdamWState {
  AdamWOptions options;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::int64_t step = 0;

  static AdamWState for_params(const ParamSet& params, AdamWOptions options = {});

  nlohmann::ordered_json to_json() const;
  static AdamWState from_json(const nlohmann::ordered_json& j);
};

// One AdamW update with bias correction and decoupled weight decay:
//   p <- p - rate * wd * p
//   p <- p - rate * m_hat / (sqrt(v_hat) + eps)
// Returns detached parameters and the advanced state.
std::pair<ParamSet, AdamWState> adamw_step(const AdamWState& state, const ParamSet& params,
                                           std::span<const ad::Tensor> grads, double rate);

// R(t) = t * target_rate / horizon for 1 <= t <= horizon.
class TeacherSchedule {
 public:
  TeacherSchedule(double target_rate, std::int64_t horizon);

  double target_rate() const { return target_rate_; }
  std::int64_t horizon() const { return horizon_; }
  double rate(std::int64_t t) const;

 private:
  double target_rate_;
  std::int64_t horizon_;
};

double schedule_rate(const TeacherSchedule& schedule, std::int64_t t);

}  // namespace msr
