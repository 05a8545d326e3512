#include "msr/optimizers.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace msr {

ParamSet sgd_virtual_step(const ParamSet& params, const ad::Tensor& loss, double rate) {
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw ad::ShapeError("sgd_virtual_step: loss must be scalar");
  }
  if (!loss.tracked()) throw ad::ShapeError("sgd_virtual_step: loss is not on a tape");
  auto grads = loss.tape()->grad(loss, params.tensors(), /*create_graph=*/true);
  std::vector<ad::Tensor> next;
  next.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    next.push_back(ad::sub(params[i], ad::scale(grads[i], rate)));
  }
  return params.with_tensors(std::move(next));
}

AdamWState AdamWState::for_params(const ParamSet& params, AdamWOptions options) {
  AdamWState state;
  state.options = options;
  for (const auto& t : params.tensors()) {
    state.first_moment.emplace_back(t.size(), 0.0);
    state.second_moment.emplace_back(t.size(), 0.0);
  }
  return state;
}

nlohmann::ordered_json AdamWState::to_json() const {
  return {{"beta1", options.beta1},
          {"beta2", options.beta2},
          {"epsilon", options.epsilon},
          {"weight_decay", options.weight_decay},
          {"step", step},
          {"first_moment", first_moment},
          {"second_moment", second_moment}};
}

AdamWState AdamWState::from_json(const nlohmann::ordered_json& j) {
  AdamWState s;
  s.options.beta1 = j.at("beta1").get<double>();
  s.options.beta2 = j.at("beta2").get<double>();
  s.options.epsilon = j.at("epsilon").get<double>();
  s.options.weight_decay = j.at("weight_decay").get<double>();
  s.step = j.at("step").get<std::int64_t>();
  s.first_moment = j.at("first_moment").get<std::vector<std::vector<double>>>();
  s.second_moment = j.at("second_moment").get<std::vector<std::vector<double>>>();
  if (s.first_moment.size() != s.second_moment.size()) {
    throw std::invalid_argument("adamw state: moment lists differ in length");
  }
  return s;
}

std::pair<ParamSet, AdamWState> adamw_step(const AdamWState& state, const ParamSet& params,
                                           std::span<const ad::Tensor> grads, double rate) {
  if (grads.size() != params.size() || state.first_moment.size() != params.size()) {
    throw ad::ShapeError("adamw_step: expected " + std::to_string(params.size()) + " tensors");
  }
  AdamWState next = state;
  next.step += 1;
  const auto& o = state.options;
  const double t = static_cast<double>(next.step);
  const double correction1 = 1.0 - std::pow(o.beta1, t);
  const double correction2 = 1.0 - std::pow(o.beta2, t);

  std::vector<ad::Tensor> updated;
  updated.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const ad::Tensor& p = params[i];
    const ad::Tensor& g = grads[i];
    if (g.rows() != p.rows() || g.cols() != p.cols() || next.first_moment[i].size() != p.size()) {
      throw ad::ShapeError("adamw_step: shape mismatch for " + std::string(params.names()[i]));
    }
    auto pv = p.values();
    auto gv = g.values();
    auto& m = next.first_moment[i];
    auto& v = next.second_moment[i];
    std::vector<double> out(pv.begin(), pv.end());
    for (std::size_t j = 0; j < out.size(); ++j) {
      out[j] -= rate * o.weight_decay * out[j];
      m[j] = o.beta1 * m[j] + (1.0 - o.beta1) * gv[j];
      v[j] = o.beta2 * v[j] + (1.0 - o.beta2) * gv[j] * gv[j];
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      out[j] -= rate * m_hat / (std::sqrt(v_hat) + o.epsilon);
    }
    updated.emplace_back(p.rows(), p.cols(), std::move(out));
  }
  return {params.with_tensors(std::move(updated)), std::move(next)};
}

TeacherSchedule::TeacherSchedule(double target_rate, std::int64_t horizon)
    : target_rate_(target_rate), horizon_(horizon) {
  if (!(target_rate > 0.0)) throw std::invalid_argument("teacher schedule: rate must be > 0");
  if (horizon < 1) throw std::invalid_argument("teacher schedule: horizon must be >= 1");
}

double TeacherSchedule::rate(std::int64_t t) const {
  if (t < 1 || t > horizon_) {
    throw std::out_of_range("teacher schedule: step " + std::to_string(t) + " outside [1, " +
                            std::to_string(horizon_) + "]");
  }
  return target_rate_ * (static_cast<double>(t) / static_cast<double>(horizon_));
}

double schedule_rate(const TeacherSchedule& schedule, std::int64_t t) { return schedule.rate(t); }

}  // namespace msr
