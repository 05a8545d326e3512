#include "msr/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace msr {

void Architecture::validate() const {
  if (input_dim == 0) throw std::invalid_argument("architecture: input_dim must be positive");
  if (classes < 2) throw std::invalid_argument("architecture: need at least 2 classes");
  for (std::size_t h : hidden) {
    if (h == 0) throw std::invalid_argument("architecture: hidden width must be positive");
  }
}

namespace {

std::vector<std::pair<std::size_t, std::size_t>> layer_shapes(const Architecture& arch) {
  std::vector<std::pair<std::size_t, std::size_t>> shapes;
  std::size_t in = arch.input_dim;
  for (std::size_t h : arch.hidden) {
    shapes.emplace_back(in, h);
    in = h;
  }
  shapes.emplace_back(in, arch.classes);
  return shapes;
}

std::vector<std::string> layer_names(std::size_t layers) {
  std::vector<std::string> names;
  for (std::size_t l = 1; l <= layers; ++l) {
    names.push_back("W" + std::to_string(l));
    names.push_back("b" + std::to_string(l));
  }
  return names;
}

}  // namespace

ParamSet::ParamSet(Architecture arch, std::vector<std::string> names,
                   std::vector<ad::Tensor> tensors)
    : arch_(std::move(arch)), names_(std::move(names)), tensors_(std::move(tensors)) {
  if (names_.size() != tensors_.size()) {
    throw std::invalid_argument("param set: names and tensors differ in length");
  }
}

ParamSet ParamSet::initialize(const Architecture& arch, std::mt19937_64& rng) {
  arch.validate();
  std::vector<ad::Tensor> tensors;
  for (auto [in, out] : layer_shapes(arch)) {
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    std::vector<double> w(in * out);
    for (double& x : w) x = dist(rng);
    tensors.emplace_back(in, out, std::move(w));
    tensors.push_back(ad::Tensor::zeros(1, out));
  }
  return ParamSet(arch, layer_names(arch.layers()), std::move(tensors));
}

ParamSet ParamSet::zeros(const Architecture& arch) {
  arch.validate();
  std::vector<ad::Tensor> tensors;
  for (auto [in, out] : layer_shapes(arch)) {
    tensors.push_back(ad::Tensor::zeros(in, out));
    tensors.push_back(ad::Tensor::zeros(1, out));
  }
  return ParamSet(arch, layer_names(arch.layers()), std::move(tensors));
}

const ad::Tensor& ParamSet::at(const std::string& name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw std::out_of_range("param set: no tensor named " + name);
  return tensors_[static_cast<std::size_t>(it - names_.begin())];
}

std::size_t ParamSet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

ParamSet ParamSet::with_tensors(std::vector<ad::Tensor> tensors) const {
  if (tensors.size() != tensors_.size()) {
    throw ad::ShapeError("param set: expected " + std::to_string(tensors_.size()) + " tensors");
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (tensors[i].rows() != tensors_[i].rows() || tensors[i].cols() != tensors_[i].cols()) {
      throw ad::ShapeError("param set: shape mismatch for " + names_[i]);
    }
  }
  return ParamSet(arch_, names_, std::move(tensors));
}

ParamSet ParamSet::attached(ad::Tape& tape) const {
  std::vector<ad::Tensor> out;
  out.reserve(tensors_.size());
  for (const auto& t : tensors_) out.push_back(tape.leaf(t));
  return ParamSet(arch_, names_, std::move(out));
}

ParamSet ParamSet::detached() const {
  std::vector<ad::Tensor> out;
  out.reserve(tensors_.size());
  for (const auto& t : tensors_) out.push_back(t.detached());
  return ParamSet(arch_, names_, std::move(out));
}

nlohmann::ordered_json ParamSet::to_json() const {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    auto values = tensors_[i].values();
    j[names_[i]] = {{"shape", {tensors_[i].rows(), tensors_[i].cols()}},
                    {"data", std::vector<double>(values.begin(), values.end())}};
  }
  return j;
}

ParamSet ParamSet::from_json(const nlohmann::ordered_json& j) {
  if (!j.is_object() || j.empty()) throw std::invalid_argument("param set: expected an object");
  std::vector<std::string> names;
  std::vector<ad::Tensor> tensors;
  for (const auto& [name, entry] : j.items()) {
    auto shape = entry.at("shape").get<std::vector<std::size_t>>();
    if (shape.size() != 2) throw std::invalid_argument("param set: " + name + " shape must be 2-d");
    tensors.emplace_back(shape[0], shape[1], entry.at("data").get<std::vector<double>>());
    names.push_back(name);
  }
  if (tensors.size() % 2 != 0 || names != layer_names(tensors.size() / 2)) {
    throw std::invalid_argument("param set: expected tensors W1, b1, ..., WL, bL in order");
  }
  Architecture arch;
  arch.input_dim = tensors[0].rows();
  for (std::size_t l = 0; l + 2 < tensors.size(); l += 2) arch.hidden.push_back(tensors[l].cols());
  arch.classes = tensors[tensors.size() - 2].cols();
  arch.validate();
  auto shapes = layer_shapes(arch);
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    const auto& w = tensors[2 * l];
    const auto& b = tensors[2 * l + 1];
    if (w.rows() != shapes[l].first || w.cols() != shapes[l].second || b.rows() != 1 ||
        b.cols() != shapes[l].second) {
      throw std::invalid_argument("param set: layer " + std::to_string(l + 1) +
                                  " shapes do not chain");
    }
  }
  return ParamSet(arch, std::move(names), std::move(tensors));
}

// ---------------------------------------------------------------------------

namespace {

void check_input(const ParamSet& params, const ad::Tensor& features) {
  if (params.size() == 0) throw ad::ShapeError("forward: empty parameter set");
  if (features.cols() != params[0].rows()) {
    throw ad::ShapeError("forward: feature dim " + std::to_string(features.cols()) +
                         " does not match input dim " + std::to_string(params[0].rows()));
  }
}

}  // namespace

ad::Tensor hidden_representation(const ParamSet& params, const ad::Tensor& features) {
  check_input(params, features);
  ad::Tensor h = features;
  for (std::size_t l = 0; l + 2 < params.size(); l += 2) {
    h = ad::tanh(ad::add_bias(ad::matmul(h, params[l]), params[l + 1]));
  }
  return h;
}

ad::Tensor logits(const ParamSet& params, const ad::Tensor& features) {
  ad::Tensor h = hidden_representation(params, features);
  const std::size_t last = params.size() - 2;
  return ad::add_bias(ad::matmul(h, params[last]), params[last + 1]);
}

ad::Tensor forward(const ParamSet& params, const ad::Tensor& features) {
  return ad::softmax_rows(logits(params, features));
}

namespace {

// Per-row -sum_c p log q, as an n x 1 column.
ad::Tensor row_cross_entropy(const ad::Tensor& target, const ad::Tensor& predicted) {
  if (target.rows() != predicted.rows() || target.cols() != predicted.cols()) {
    throw ad::ShapeError("cross_entropy: target and prediction shapes differ");
  }
  ad::Tensor log_q = ad::log(ad::max_const(predicted, kLogFloor));
  return ad::scale(ad::row_sum(ad::mul(target, log_q)), -1.0);
}

}  // namespace

ad::Tensor cross_entropy(const ad::Tensor& target, const ad::Tensor& predicted) {
  return ad::mean(row_cross_entropy(target, predicted));
}

ad::Tensor weighted_cross_entropy(const ad::Tensor& target, const ad::Tensor& predicted,
                                  std::span<const double> weights) {
  if (weights.size() != predicted.rows()) {
    throw ad::ShapeError("weighted_cross_entropy: one weight per row required");
  }
  ad::Tensor per_row = row_cross_entropy(target, predicted);
  ad::Tensor w(weights.size(), 1, std::vector<double>(weights.begin(), weights.end()));
  return ad::scale(ad::sum(ad::mul(per_row, w)), 1.0 / static_cast<double>(weights.size()));
}

double entropy(std::span<const double> distribution) {
  double h = 0.0;
  for (double p : distribution) {
    if (p > 0.0) h -= p * std::log(std::max(p, kLogFloor));
  }
  return h;
}

double confidence(std::span<const double> distribution) {
  // ln k - H(p) written as KL(p || uniform) = sum p ln(k p), which is exactly
  // zero for uniform rows and exactly ln k for one-hot rows.
  const double k = static_cast<double>(distribution.size());
  double divergence = 0.0;
  for (double p : distribution) {
    if (p > 0.0) divergence += p * std::log(k * std::max(p, kLogFloor));
  }
  return std::clamp(divergence / std::log(k), 0.0, 1.0);
}

std::vector<double> confidence(const ad::Tensor& probabilities) {
  std::vector<double> out(probabilities.rows());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = confidence(probabilities.row(i));
  return out;
}

std::vector<int> argmax_rows(const ad::Tensor& scores) {
  std::vector<int> out(scores.rows());
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto r = scores.row(i);
    out[i] = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return out;
}

ad::Tensor one_hot(std::span<const int> labels, std::size_t classes) {
  std::vector<double> v(labels.size() * classes, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw std::out_of_range("one_hot: label " + std::to_string(labels[i]) + " out of range");
    }
    v[i * classes + static_cast<std::size_t>(labels[i])] = 1.0;
  }
  return ad::Tensor(labels.size(), classes, std::move(v));
}

}  // namespace msr
