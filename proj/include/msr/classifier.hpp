// Feed-forward tanh classifiers over dense feature vectors, with the
// soft-target cross-entropy loss and the entropy-based confidence score.

#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "msr/autodiff.hpp"

namespace msr {

// Input width, hidden widths (possibly none) and class count.
struct Architecture {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden;
  std::size_t classes = 0;

  // Throws std::invalid_argument when a dimension is zero or classes < 2.
  void validate() const;
  std::size_t layers() const { return hidden.size() + 1; }
  std::size_t last_hidden_width() const { return hidden.empty() ? input_dim : hidden.back(); }

  bool operator==(const Architecture&) const = default;
};

// Ordered named tensors W1, b1, ..., WL, bL for one network.
class ParamSet {
 public:
  ParamSet() = default;
  ParamSet(Architecture arch, std::vector<std::string> names, std::vector<ad::Tensor> tensors);

  // Glorot-uniform weights, zero biases.
  static ParamSet initialize(const Architecture& arch, std::mt19937_64& rng);
  static ParamSet zeros(const Architecture& arch);

  const Architecture& architecture() const { return arch_; }
  std::size_t size() const { return tensors_.size(); }
  std::span<const std::string> names() const { return names_; }
  std::span<const ad::Tensor> tensors() const { return tensors_; }
  const ad::Tensor& operator[](std::size_t i) const { return tensors_.at(i); }
  const ad::Tensor& at(const std::string& name) const;
  std::size_t parameter_count() const;

  // Same names and architecture, new tensors (shapes must match).
  ParamSet with_tensors(std::vector<ad::Tensor> tensors) const;
  // Every tensor registered as a leaf of `tape`.
  ParamSet attached(ad::Tape& tape) const;
  ParamSet detached() const;

  // Flat {name: {"shape": [r, c], "data": [...]}} in layer order.
  nlohmann::ordered_json to_json() const;
  // Architecture is inferred from the W shapes.
  static ParamSet from_json(const nlohmann::ordered_json& j);

 private:
  Architecture arch_;
  std::vector<std::string> names_;
  std::vector<ad::Tensor> tensors_;
};

inline constexpr double kLogFloor = 1e-12;

// Last hidden layer activations (the input itself when there is no hidden layer).
ad::Tensor hidden_representation(const ParamSet& params, const ad::Tensor& features);
ad::Tensor logits(const ParamSet& params, const ad::Tensor& features);
// Row-normalized class probabilities, batch x k.
ad::Tensor forward(const ParamSet& params, const ad::Tensor& features);

// -mean_i sum_c target[i,c] * log(max(predicted[i,c], 1e-12)).
ad::Tensor cross_entropy(const ad::Tensor& target, const ad::Tensor& predicted);
// sum_i w_i * CE_i / batch; zero-weight rows still count in the denominator.
ad::Tensor weighted_cross_entropy(const ad::Tensor& target, const ad::Tensor& predicted,
                                  std::span<const double> weights);

double entropy(std::span<const double> distribution);
// 1 - H(p) / ln k for one distribution over k = p.size() classes.
double confidence(std::span<const double> distribution);
std::vector<double> confidence(const ad::Tensor& probabilities);

std::vector<int> argmax_rows(const ad::Tensor& scores);
ad::Tensor one_hot(std::span<const int> labels, std::size_t classes);

}  // namespace msr
