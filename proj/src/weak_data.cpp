#include "msr/weak_data.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

namespace msr {

std::string_view split_name(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Validation: return "valid";
    case Split::Test: return "test";
  }
  return "train";
}

std::optional<Split> parse_split(std::string_view name) {
  if (name == "train") return Split::Train;
  if (name == "valid") return Split::Validation;
  if (name == "test") return Split::Test;
  return std::nullopt;
}

std::span<const double> WeakDataset::feature_row(std::size_t i) const {
  return std::span<const double>(features).subspan(i * dim, dim);
}

std::span<const int> WeakDataset::source_row(std::size_t i) const {
  return std::span<const int>(source_labels).subspan(i * sources, sources);
}

std::vector<std::size_t> WeakDataset::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < size(); ++i) {
    if (split[i] == s) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> WeakDataset::weakly_labeled() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < size(); ++i) {
    if (split[i] == Split::Train && weak[i] != kAbstain) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> WeakDataset::unlabeled() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < size(); ++i) {
    if (split[i] == Split::Train && weak[i] == kAbstain) out.push_back(i);
  }
  return out;
}

ad::Tensor WeakDataset::feature_matrix(std::span<const std::size_t> rows) const {
  std::vector<double> v;
  v.reserve(rows.size() * dim);
  for (std::size_t r : rows) {
    auto f = feature_row(r);
    v.insert(v.end(), f.begin(), f.end());
  }
  return ad::Tensor(rows.size(), dim, std::move(v));
}

std::vector<int> WeakDataset::gold_labels(std::span<const std::size_t> rows) const {
  std::vector<int> out;
  out.reserve(rows.size());
  for (std::size_t r : rows) out.push_back(gold[r]);
  return out;
}

std::vector<int> WeakDataset::weak_labels(std::span<const std::size_t> rows) const {
  std::vector<int> out;
  out.reserve(rows.size());
  for (std::size_t r : rows) out.push_back(weak[r]);
  return out;
}

void WeakDataset::validate() const {
  const std::size_t n = size();
  if (classes < 2) throw DataError("dataset: k must be at least 2");
  if (dim == 0) throw DataError("dataset: d must be positive");
  if (sources == 0) throw DataError("dataset: S must be positive");
  if (features.size() != n * dim || source_labels.size() != n * sources || weak.size() != n ||
      gold.size() != n || split.size() != n) {
    throw DataError("dataset: column lengths are inconsistent");
  }
  const int k = static_cast<int>(classes);
  for (std::size_t i = 0; i < n; ++i) {
    const std::string at = "row " + std::to_string(i) + ": ";
    bool any = false;
    for (int l : source_row(i)) {
      if (l < kAbstain || l >= k) throw DataError(at + "weak label " + std::to_string(l) + " out of range");
      any = any || l != kAbstain;
    }
    if (weak[i] < kAbstain || weak[i] >= k) throw DataError(at + "aggregated label out of range");
    if ((weak[i] == kAbstain) == any) {
      throw DataError(at + "aggregated label must be -1 exactly when every source abstains");
    }
    if (weak[i] != kAbstain &&
        std::find(source_row(i).begin(), source_row(i).end(), weak[i]) == source_row(i).end()) {
      throw DataError(at + "aggregated label not proposed by any source");
    }
    if (gold[i] < kAbstain || gold[i] >= k) throw DataError(at + "gold label out of range");
    if (split[i] != Split::Train && gold[i] == kAbstain) {
      throw DataError(at + "validation and test rows need a gold label");
    }
  }
}

int majority_vote(std::span<const int> row, std::mt19937_64& rng) {
  std::map<int, int> counts;
  for (int l : row) {
    if (l != kAbstain) ++counts[l];
  }
  if (counts.empty()) return kAbstain;
  int best = 0;
  for (const auto& [label, c] : counts) best = std::max(best, c);
  std::vector<int> tied;
  for (const auto& [label, c] : counts) {
    if (c == best) tied.push_back(label);
  }
  if (tied.size() == 1) return tied.front();
  std::uniform_int_distribution<std::size_t> pick(0, tied.size() - 1);
  return tied[pick(rng)];
}

void aggregate_weak_labels(WeakDataset& ds, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ds.weak.assign(ds.size(), kAbstain);
  for (std::size_t i = 0; i < ds.size(); ++i) ds.weak[i] = majority_vote(ds.source_row(i), rng);
}

CorpusStats compute_stats(const WeakDataset& ds) {
  CorpusStats st;
  st.samples = ds.size();
  st.weak_histogram.assign(ds.classes, 0);
  std::size_t conflicts = 0;
  std::size_t with_gold = 0;
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.split[i] == Split::Validation) ++st.validation;
    if (ds.split[i] == Split::Test) ++st.test;
    if (ds.split[i] != Split::Train) continue;
    ++st.train;

    int first = kAbstain;
    bool conflict = false;
    for (int l : ds.source_row(i)) {
      if (l == kAbstain) continue;
      if (first == kAbstain) first = l;
      else if (l != first) conflict = true;
    }
    if (conflict) ++conflicts;

    if (ds.weak[i] == kAbstain) {
      ++st.unlabeled;
      continue;
    }
    ++st.weakly_labeled;
    ++st.weak_histogram[static_cast<std::size_t>(ds.weak[i])];
    if (ds.gold[i] != kAbstain) {
      ++with_gold;
      if (ds.gold[i] != ds.weak[i]) ++wrong;
    }
  }
  if (st.train > 0) {
    st.coverage = static_cast<double>(st.weakly_labeled) / static_cast<double>(st.train);
    st.conflict = static_cast<double>(conflicts) / static_cast<double>(st.train);
  }
  if (with_gold > 0) st.noise_rate = static_cast<double>(wrong) / static_cast<double>(with_gold);
  return st;
}

// ---------------------------------------------------------------------------
// JSONL

namespace {

template <typename T>
T field(const nlohmann::json& j, const char* key, std::size_t line) {
  if (!j.contains(key)) {
    throw DataError("line " + std::to_string(line) + ": missing field \"" + key + "\"");
  }
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw DataError("line " + std::to_string(line) + ": field \"" + key + "\" has the wrong type");
  }
}

}  // namespace

WeakDataset parse_dataset(std::istream& in) {
  WeakDataset ds;
  std::string text;
  std::size_t line = 0;

  auto parse_line = [&](std::size_t at) {
    try {
      return nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError("line " + std::to_string(at) + ": malformed JSON (" + e.what() + ")");
    }
  };

  bool have_header = false;
  int k = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (!have_header) {
      auto header = parse_line(line);
      auto dims = [&](const char* key) {
        auto v = field<long long>(header, key, line);
        if (v < 0) throw DataError("line " + std::to_string(line) + ": " + key + " is negative");
        return static_cast<std::size_t>(v);
      };
      ds.classes = dims("k");
      ds.dim = dims("d");
      ds.sources = dims("S");
      if (ds.sources == 0) throw DataError("line " + std::to_string(line) + ": S must be positive");
      if (ds.classes < 2) throw DataError("line " + std::to_string(line) + ": k must be at least 2");
      if (ds.dim == 0) throw DataError("line " + std::to_string(line) + ": d must be positive");
      k = static_cast<int>(ds.classes);
      have_header = true;
      continue;
    }
    const std::size_t row = ds.size();
    const std::string where = "line " + std::to_string(line) + " (row " + std::to_string(row) + "): ";
    auto rec = parse_line(line);
    auto features = field<std::vector<double>>(rec, "features", line);
    auto weak = field<std::vector<int>>(rec, "weak", line);
    if (features.size() != ds.dim) throw DataError(where + "expected " + std::to_string(ds.dim) + " features");
    if (weak.empty()) throw DataError(where + "empty weak-label array");
    if (weak.size() != ds.sources) throw DataError(where + "expected " + std::to_string(ds.sources) + " weak labels");
    for (int l : weak) {
      if (l < kAbstain || l >= k) throw DataError(where + "weak label " + std::to_string(l) + " out of range");
    }
    int gold = kAbstain;
    if (!rec.contains("gold")) throw DataError(where + "missing field \"gold\"");
    if (!rec["gold"].is_null()) {
      gold = field<int>(rec, "gold", line);
      if (gold < 0 || gold >= k) throw DataError(where + "gold label " + std::to_string(gold) + " out of range");
    }
    auto split = parse_split(field<std::string>(rec, "split", line));
    if (!split) throw DataError(where + "split must be train, valid or test");
    if (*split != Split::Train && gold == kAbstain) {
      throw DataError(where + "validation and test rows need a gold label");
    }

    ds.ids.push_back(field<std::string>(rec, "id", line));
    ds.features.insert(ds.features.end(), features.begin(), features.end());
    ds.source_labels.insert(ds.source_labels.end(), weak.begin(), weak.end());
    ds.gold.push_back(gold);
    ds.split.push_back(*split);
  }
  if (!have_header) throw DataError("dataset: missing header line");
  if (ds.size() == 0) throw DataError("dataset: no records");
  aggregate_weak_labels(ds, 0);
  ds.validate();
  return ds;
}

WeakDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return parse_dataset(in);
}

void write_dataset(const WeakDataset& ds, std::ostream& out) {
  nlohmann::ordered_json header = {{"k", ds.classes}, {"d", ds.dim}, {"S", ds.sources}};
  out << header.dump() << '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto f = ds.feature_row(i);
    auto w = ds.source_row(i);
    nlohmann::ordered_json rec;
    rec["id"] = ds.ids[i];
    rec["features"] = std::vector<double>(f.begin(), f.end());
    rec["weak"] = std::vector<int>(w.begin(), w.end());
    rec["gold"] = ds.gold[i] == kAbstain ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(ds.gold[i]);
    rec["split"] = std::string(split_name(ds.split[i]));
    out << rec.dump() << '\n';
  }
}

void save_dataset(const WeakDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  write_dataset(ds, out);
  if (!out) throw DataError("write failed: " + path.string());
}

WeakDataset subsample_validation(const WeakDataset& ds, std::size_t m, std::mt19937_64& rng) {
  auto valid = ds.indices(Split::Validation);
  if (m > valid.size()) {
    throw DataError("subsample_validation: requested " + std::to_string(m) + " of " +
                    std::to_string(valid.size()) + " validation rows");
  }
  // Partial Fisher-Yates over the validation indices.
  for (std::size_t i = 0; i < m; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, valid.size() - 1);
    std::swap(valid[i], valid[pick(rng)]);
  }
  std::vector<bool> keep(ds.size(), true);
  for (std::size_t i = m; i < valid.size(); ++i) keep[valid[i]] = false;

  WeakDataset out;
  out.classes = ds.classes;
  out.dim = ds.dim;
  out.sources = ds.sources;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (!keep[i]) continue;
    out.ids.push_back(ds.ids[i]);
    auto f = ds.feature_row(i);
    out.features.insert(out.features.end(), f.begin(), f.end());
    auto s = ds.source_row(i);
    out.source_labels.insert(out.source_labels.end(), s.begin(), s.end());
    out.weak.push_back(ds.weak[i]);
    out.gold.push_back(ds.gold[i]);
    out.split.push_back(ds.split[i]);
  }
  return out;
}

}  // namespace msr
