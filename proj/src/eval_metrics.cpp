#include "msr/eval_metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace msr {

std::optional<double> ErrorDecomposition::rate(std::size_t count, bool wrong_branch) const {
  const std::size_t denom = wrong_branch ? weak_wrong : weak_right;
  if (denom == 0) return std::nullopt;
  return static_cast<double>(count) / static_cast<double>(denom);
}

namespace {

nlohmann::ordered_json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

std::string optional_csv(const std::optional<double>& v) { return v ? format_number(*v) : ""; }

}  // namespace

nlohmann::ordered_json ErrorDecomposition::to_json() const {
  nlohmann::ordered_json j;
  j["rows"] = rows;
  j["no_weak"] = no_weak;
  j["weak_wrong"] = weak_wrong;
  j["weak_right"] = weak_right;
  j["counts"] = {{"robust", robust},
                 {"type_a", type_a},
                 {"type_b", type_b},
                 {"correct_on_clean", correct_on_clean},
                 {"type_c", type_c}};
  j["rates"] = {{"robust", optional_json(robust_rate())},
                {"type_a", optional_json(type_a_rate())},
                {"type_b", optional_json(type_b_rate())},
                {"correct_on_clean", optional_json(correct_on_clean_rate())},
                {"type_c", optional_json(type_c_rate())}};
  j["normalization"] = "robust, type_a, type_b over weak_wrong; correct_on_clean, type_c over weak_right";
  return j;
}

void ErrorDecomposition::write_csv(std::ostream& out) const {
  out << "category,count,rate,denominator\n";
  auto row = [&](const char* name, std::size_t count, const std::optional<double>& r, const char* denom) {
    out << name << ',' << count << ',' << optional_csv(r) << ',' << denom << '\n';
  };
  row("robust", robust, robust_rate(), "weak_wrong");
  row("type_a", type_a, type_a_rate(), "weak_wrong");
  row("type_b", type_b, type_b_rate(), "weak_wrong");
  row("correct_on_clean", correct_on_clean, correct_on_clean_rate(), "weak_right");
  row("type_c", type_c, type_c_rate(), "weak_right");
  out << "no_weak," << no_weak << ",,rows\n";
}

ErrorDecomposition error_decomposition(std::span<const int> pred, std::span<const int> weak,
                                       std::span<const int> gold) {
  if (pred.size() != weak.size() || pred.size() != gold.size()) {
    throw std::invalid_argument("error_decomposition: label vectors differ in length");
  }
  ErrorDecomposition d;
  d.rows = pred.size();
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (gold[i] == kAbstain) throw std::invalid_argument("error_decomposition: row without gold label");
    if (weak[i] == kAbstain) {
      ++d.no_weak;
      continue;
    }
    if (weak[i] != gold[i]) {
      ++d.weak_wrong;
      if (pred[i] == gold[i]) ++d.robust;
      else if (pred[i] == weak[i]) ++d.type_a;
      else ++d.type_b;
    } else {
      ++d.weak_right;
      if (pred[i] == gold[i]) ++d.correct_on_clean;
      else ++d.type_c;
    }
  }
  return d;
}

double accuracy(std::span<const int> pred, std::span<const int> gold) {
  if (pred.size() != gold.size()) throw std::invalid_argument("accuracy: length mismatch");
  if (pred.empty()) throw std::invalid_argument("accuracy: no rows");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == gold[i];
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

std::vector<CurvePoint> confidence_accuracy_curve(const ad::Tensor& probabilities,
                                                  std::span<const int> gold,
                                                  std::span<const double> thresholds) {
  if (probabilities.rows() != gold.size()) {
    throw std::invalid_argument("confidence_accuracy_curve: one gold label per row required");
  }
  for (std::size_t i = 0; i < probabilities.rows(); ++i) {
    auto r = probabilities.row(i);
    double total = 0.0;
    for (double p : r) {
      if (!(p >= 0.0)) throw std::invalid_argument("confidence_accuracy_curve: negative probability");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) {
      throw std::invalid_argument("confidence_accuracy_curve: row " + std::to_string(i) +
                                  " does not sum to 1");
    }
  }
  auto conf = confidence(probabilities);
  auto pred = argmax_rows(probabilities);
  std::vector<CurvePoint> out;
  for (double tau : thresholds) {
    CurvePoint p;
    p.tau = tau;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < conf.size(); ++i) {
      if (conf[i] >= tau) {
        ++p.kept;
        correct += pred[i] == gold[i];
      }
    }
    p.keep_rate = conf.empty() ? 0.0 : static_cast<double>(p.kept) / static_cast<double>(conf.size());
    if (p.kept > 0) p.accuracy = static_cast<double>(correct) / static_cast<double>(p.kept);
    out.push_back(p);
  }
  return out;
}

void write_curve_csv(std::span<const CurvePoint> curve, std::ostream& out) {
  out << "tau,kept,keep_rate,accuracy\n";
  for (const auto& p : curve) {
    out << format_number(p.tau) << ',' << p.kept << ',' << format_number(p.keep_rate) << ','
        << optional_csv(p.accuracy) << '\n';
  }
}

nlohmann::ordered_json curve_to_json(std::span<const CurvePoint> curve) {
  auto j = nlohmann::ordered_json::array();
  for (const auto& p : curve) {
    j.push_back({{"tau", p.tau}, {"kept", p.kept}, {"keep_rate", p.keep_rate},
                 {"accuracy", optional_json(p.accuracy)}});
  }
  return j;
}

void export_representations(const ParamSet& params, const WeakDataset& ds, std::ostream& out) {
  std::vector<std::size_t> rows(ds.size());
  std::iota(rows.begin(), rows.end(), 0);
  auto frozen = params.detached();
  auto x = ds.feature_matrix(rows);
  auto h = hidden_representation(frozen, x);
  auto probs = forward(frozen, x);
  auto pred = argmax_rows(probs);
  auto conf = confidence(probs);
  out << "id,split";
  for (std::size_t c = 0; c < h.cols(); ++c) out << ",h" << c;
  out << ",pred,confidence,gold\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out << ds.ids[i] << ',' << split_name(ds.split[i]);
    for (double v : h.row(i)) out << ',' << format_number(v);
    out << ',' << pred[i] << ',' << format_number(conf[i]) << ',';
    if (ds.gold[i] != kAbstain) out << ds.gold[i];
    out << '\n';
  }
}

void export_representations(const ParamSet& params, const WeakDataset& ds,
                            const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  export_representations(params, ds, out);
  out.flush();
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::string format_number(double value) {
  char buf[32];
  for (int precision = 1; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof buf, "%.*g", precision, value);
    if (std::strtod(buf, nullptr) == value) break;
  }
  return buf;
}

}  // namespace msr
