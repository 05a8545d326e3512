#include "msr/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <exception>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <thread>

#include "msr/eval_metrics.hpp"

namespace msr {

namespace {

using Json = nlohmann::ordered_json;
using Entry = KeyValues::Entry;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(trim(item));
  return out;
}

[[noreturn]] void fail(const std::string& source, const std::string& key, const Entry& e,
                       const std::string& expected) {
  throw ConfigError(source + ":" + std::to_string(e.line) + ": " + key + ": expected " + expected +
                    ", got '" + e.value + "'");
}

template <class T>
std::optional<T> parse_number(const std::string& text) {
  T v{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) return std::nullopt;
  return v;
}

struct Reader {
  const KeyValues& kv;

  double real(const std::string& key, const Entry& e) const {
    auto v = parse_number<double>(e.value);
    if (!v || !std::isfinite(*v)) fail(kv.source, key, e, "a number");
    return *v;
  }
  std::uint64_t count(const std::string& key, const Entry& e) const {
    auto v = parse_number<std::uint64_t>(e.value);
    if (!v) fail(kv.source, key, e, "a non-negative integer");
    return *v;
  }
  bool flag(const std::string& key, const Entry& e) const {
    if (e.value == "true" || e.value == "on" || e.value == "yes" || e.value == "1") return true;
    if (e.value == "false" || e.value == "off" || e.value == "no" || e.value == "0") return false;
    fail(kv.source, key, e, "true or false");
  }
  std::vector<double> reals(const std::string& key, const Entry& e) const {
    std::vector<double> out;
    for (const auto& item : split_list(e.value)) {
      auto v = parse_number<double>(item);
      if (!v || !std::isfinite(*v)) fail(kv.source, key, e, "a comma separated list of numbers");
      out.push_back(*v);
    }
    if (out.empty()) fail(kv.source, key, e, "a non-empty list");
    return out;
  }
  std::vector<std::size_t> counts(const std::string& key, const Entry& e) const {
    std::vector<std::size_t> out;
    for (const auto& item : split_list(e.value)) {
      auto v = parse_number<std::size_t>(item);
      if (!v) fail(kv.source, key, e, "a comma separated list of integers");
      out.push_back(*v);
    }
    return out;
  }
};

// Returns false when `key` is not a synth field.
bool apply_synth(SynthSpec& spec, const std::string& field, const std::string& key, const Entry& e,
                 const Reader& r) {
  if (field == "classes") spec.classes = r.count(key, e);
  else if (field == "dim") spec.dim = r.count(key, e);
  else if (field == "samples") spec.samples = r.count(key, e);
  else if (field == "separation") spec.separation = r.real(key, e);
  else if (field == "sources") spec.sources = r.count(key, e);
  else if (field == "coverage") spec.coverage = r.reals(key, e);
  else if (field == "error_rate") spec.error_rate = r.reals(key, e);
  else if (field == "target_noise") spec.target_noise = r.real(key, e);
  else if (field == "seed") spec.seed = r.count(key, e);
  else if (field == "style") {
    auto s = parse_noise_style(e.value);
    if (!s) fail(r.kv.source, key, e, "feature-dependent or uniform");
    spec.style = *s;
  } else {
    return false;
  }
  return true;
}

bool apply_train(TrainConfig& t, const std::string& field, const std::string& key, const Entry& e,
                 const Reader& r) {
  auto signed_count = [&] { return static_cast<std::int64_t>(r.count(key, e)); };
  if (field == "student_rate") t.student_rate = r.real(key, e);
  else if (field == "teacher_rate") t.teacher_rate = r.real(key, e);
  else if (field == "init_rate") t.init_rate = r.real(key, e);
  else if (field == "steps") t.steps = signed_count();
  else if (field == "init_steps") t.init_steps = signed_count();
  else if (field == "tau") t.tau = r.real(key, e);
  else if (field == "batch") t.batch = r.count(key, e);
  else if (field == "valid_batch") t.valid_batch = r.count(key, e);
  else if (field == "warmup") t.warmup = signed_count();
  else if (field == "use_scheduler") t.use_scheduler = r.flag(key, e);
  else if (field == "use_filter") t.use_filter = r.flag(key, e);
  else if (field == "patience") t.patience = signed_count();
  else if (field == "eval_every") t.eval_every = signed_count();
  else if (field == "hidden") t.hidden = r.counts(key, e);
  else if (field == "weight_decay") t.weight_decay = r.real(key, e);
  else if (field == "soft_pseudo_labels") t.soft_pseudo_labels = r.flag(key, e);
  else return false;
  return true;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  out.flush();
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

Json optional_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

// Runs job(i) for i in [0, n) on up to `workers` threads; rethrows the
// failure of the lowest index.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& job) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto loop = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        job(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::min(std::max<std::size_t>(workers, 1), n);
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(loop);
  loop();
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// Per-seed copy: re-aggregated weak labels and the optional validation
// subsample.
WeakDataset prepare(const WeakDataset& base, const ExperimentConfig& cfg, std::uint64_t seed) {
  WeakDataset ds = base;
  auto rng = make_rng(seed, RngStream::TieBreak);
  aggregate_weak_labels(ds, rng());
  if (cfg.validation_size) ds = subsample_validation(ds, *cfg.validation_size, rng);
  return ds;
}

TrainConfig seeded(const TrainConfig& t, std::uint64_t seed) {
  TrainConfig c = t;
  c.seed = seed;
  return c;
}

struct Outputs {
  Json metrics;
  Json report;
};

Json decomposition_metrics(const ErrorDecomposition& d) {
  return {{"robust_rate", optional_json(d.robust_rate())},
          {"type_a_rate", optional_json(d.type_a_rate())},
          {"type_b_rate", optional_json(d.type_b_rate())},
          {"type_c_rate", optional_json(d.type_c_rate())}};
}

// Test-split evaluation of a trained run; writes the per-seed artifacts.
Outputs finish_trained(const WeakDataset& ds, const TrainReport& report, const ExperimentConfig& cfg,
                       const std::filesystem::path& dir) {
  const auto test = ds.indices(Split::Test);
  auto probs = forward(report.student_best.detached(), ds.feature_matrix(test));
  auto pred = argmax_rows(probs);
  auto gold = ds.gold_labels(test);
  auto weak = ds.weak_labels(test);
  auto decomposition = error_decomposition(pred, weak, gold);
  auto curve = confidence_accuracy_curve(probs, gold, cfg.thresholds);

  Json m;
  m["test_accuracy"] = report.best.student.test;
  m["valid_accuracy"] = report.best.student.valid;
  m["teacher_test_accuracy"] =
      report.best.teacher ? Json(report.best.teacher->test) : Json(nullptr);
  m["best_step"] = report.best_step;
  m.update(decomposition_metrics(decomposition));

  std::filesystem::create_directories(dir);
  std::ostringstream csv;
  decomposition.write_csv(csv);
  write_text(dir / "decomposition.csv", csv.str());
  std::ostringstream cc;
  write_curve_csv(curve, cc);
  write_text(dir / "curve.csv", cc.str());
  export_representations(report.student_best, ds, dir / "repr.csv");

  Json r;
  r["experiment"] = cfg.to_json();
  r["metrics"] = m;
  r["decomposition"] = decomposition.to_json();
  r["curve"] = curve_to_json(curve);
  r["training"] = report.to_json(true);
  write_text(dir / "report.json", r.dump(2) + "\n");
  return {m, r};
}

Outputs run_majority(const WeakDataset& ds, const ExperimentConfig& cfg, std::uint64_t seed,
                     const std::filesystem::path& dir) {
  const auto test = ds.indices(Split::Test);
  auto gold = ds.gold_labels(test);
  auto weak = ds.weak_labels(test);
  auto rng = make_rng(seed, RngStream::TieBreak);
  rng.discard(1);
  std::uniform_int_distribution<int> any(0, static_cast<int>(ds.classes) - 1);
  std::vector<int> pred = weak;
  for (int& p : pred) {
    if (p == kAbstain) p = any(rng);
  }
  auto decomposition = error_decomposition(pred, weak, gold);
  Json m;
  m["test_accuracy"] = accuracy(pred, gold);
  m.update(decomposition_metrics(decomposition));

  std::filesystem::create_directories(dir);
  std::ostringstream csv;
  decomposition.write_csv(csv);
  write_text(dir / "decomposition.csv", csv.str());
  Json r;
  r["experiment"] = cfg.to_json();
  r["metrics"] = m;
  r["decomposition"] = decomposition.to_json();
  write_text(dir / "report.json", r.dump(2) + "\n");
  return {m, r};
}

std::filesystem::path seed_dir(const std::filesystem::path& root, const std::string& name,
                               std::uint64_t seed) {
  return root / name / std::to_string(seed);
}

Json rows_json(const std::vector<SeedResult>& rows) {
  auto out = Json::array();
  for (const auto& r : rows) {
    Json row;
    row["seed"] = r.seed;
    row.update(r.metrics);
    out.push_back(row);
  }
  return out;
}

Json summary_block(const std::vector<SeedResult>& rows) {
  Json j;
  j["rows"] = rows_json(rows);
  auto agg = aggregate_metrics(rows);
  j["mean"] = agg["mean"];
  j["std"] = agg["std"];
  return j;
}

template <class F>
int guarded(F&& body) {
  try {
    body();
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const InfeasibleSpec& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 1;
  } catch (const TrainingError& e) {
    std::cerr << "training aborted: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace

KeyValues KeyValues::parse(std::istream& in, const std::string& source) {
  KeyValues kv;
  kv.source = source;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::string text = trim(line);
    if (text.empty()) continue;
    auto eq = text.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(number) + ": expected key = value");
    }
    std::string key = trim(std::string_view(text).substr(0, eq));
    std::string value = trim(std::string_view(text).substr(eq + 1));
    if (key.empty()) throw ConfigError(source + ":" + std::to_string(number) + ": missing key");
    auto [it, inserted] = kv.entries.emplace(key, Entry{value, number});
    if (!inserted) {
      throw ConfigError(source + ":" + std::to_string(number) + ": " + key + " already set on line " +
                        std::to_string(it->second.line));
    }
  }
  return kv;
}

KeyValues KeyValues::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  return parse(in, path.string());
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> out;
  for (const auto& item : split_list(text)) {
    auto dash = item.find('-');
    if (dash != std::string::npos && dash > 0) {
      auto lo = parse_number<std::uint64_t>(trim(item.substr(0, dash)));
      auto hi = parse_number<std::uint64_t>(trim(item.substr(dash + 1)));
      if (!lo || !hi || *hi < *lo) throw ConfigError("bad seed range '" + item + "'");
      for (auto s = *lo; s <= *hi; ++s) out.push_back(s);
    } else {
      auto v = parse_number<std::uint64_t>(item);
      if (!v) throw ConfigError("bad seed '" + item + "'");
      out.push_back(*v);
    }
  }
  if (out.empty()) throw ConfigError("empty seed list");
  return out;
}

SynthSpec parse_synth_spec(const KeyValues& kv) {
  Reader r{kv};
  SynthSpec spec;
  for (const auto& [key, e] : kv.entries) {
    if (!apply_synth(spec, key, key, e, r)) {
      throw ConfigError(kv.source + ":" + std::to_string(e.line) + ": unknown key " + key);
    }
  }
  try {
    spec.validate();
  } catch (const std::invalid_argument& ex) {
    throw ConfigError(kv.source + ": " + ex.what());
  }
  return spec;
}

ExperimentConfig parse_config(const KeyValues& kv) {
  Reader r{kv};
  ExperimentConfig cfg;
  const std::string synth_prefix = "data.synth.";
  const std::string train_prefix = "train.";
  for (const auto& [key, e] : kv.entries) {
    bool known = true;
    if (key.rfind(synth_prefix, 0) == 0) {
      if (!cfg.synth) cfg.synth = SynthSpec{};
      known = apply_synth(*cfg.synth, key.substr(synth_prefix.size()), key, e, r);
    } else if (key.rfind(train_prefix, 0) == 0) {
      known = apply_train(cfg.train, key.substr(train_prefix.size()), key, e, r);
    } else if (key == "data.path") {
      cfg.data_path = e.value;
    } else if (key == "method") {
      cfg.method = e.value;
    } else if (key == "seeds") {
      try {
        cfg.seeds = parse_seed_list(e.value);
      } catch (const ConfigError&) {
        fail(kv.source, key, e, "a list of seeds");
      }
    } else if (key == "output") {
      cfg.output = e.value;
    } else if (key == "workers") {
      cfg.workers = r.count(key, e);
    } else if (key == "validation.size") {
      cfg.validation_size = r.count(key, e);
    } else if (key == "eval.thresholds") {
      cfg.thresholds = r.reals(key, e);
    } else {
      known = false;
    }
    if (!known) throw ConfigError(kv.source + ":" + std::to_string(e.line) + ": unknown key " + key);
  }
  try {
    cfg.validate();
  } catch (const ConfigError& ex) {
    throw ConfigError(kv.source + ": " + ex.what());
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  return parse_config(KeyValues::load(path));
}

void ExperimentConfig::validate() const {
  if (data_path.has_value() == synth.has_value()) {
    throw ConfigError("set exactly one of data.path or data.synth.*");
  }
  if (method != "msr" && method != "ft-wl" && method != "ft-wlst" && method != "majority") {
    throw ConfigError("method must be msr, ft-wl, ft-wlst or majority, got '" + method + "'");
  }
  if (seeds.empty()) throw ConfigError("seeds: empty list");
  if (validation_size && *validation_size == 0) throw ConfigError("validation.size must be positive");
  if (workers == 0) throw ConfigError("workers must be at least 1");
  try {
    train.validate();
    if (synth) synth->validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

Json ExperimentConfig::to_json() const {
  Json j;
  if (data_path) j["data"] = {{"path", data_path->string()}};
  else j["data"] = {{"synth", synth->to_json()}};
  j["method"] = method;
  j["seeds"] = seeds;
  j["validation_size"] = validation_size ? Json(*validation_size) : Json(nullptr);
  j["thresholds"] = thresholds;
  j["train"] = train.to_json();
  return j;
}

WeakDataset load_experiment_data(const ExperimentConfig& cfg) {
  if (cfg.data_path) return load_dataset(*cfg.data_path);
  return generate(*cfg.synth);
}

Json aggregate_metrics(const std::vector<SeedResult>& rows) {
  Json mean = Json::object(), sd = Json::object();
  if (rows.empty()) return {{"mean", mean}, {"std", sd}};
  for (const auto& [name, first] : rows.front().metrics.items()) {
    std::vector<double> v;
    for (const auto& r : rows) {
      const auto& x = r.metrics.at(name);
      if (!x.is_number()) break;
      v.push_back(x.get<double>());
    }
    if (v.size() != rows.size()) {
      mean[name] = nullptr;
      sd[name] = nullptr;
      continue;
    }
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    mean[name] = m;
    sd[name] = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
  }
  return {{"mean", mean}, {"std", sd}};
}

Json run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const WeakDataset base = load_experiment_data(cfg);
  std::vector<SeedResult> rows(cfg.seeds.size());
  parallel_for(cfg.seeds.size(), cfg.workers, [&](std::size_t i) {
    const auto seed = cfg.seeds[i];
    const auto ds = prepare(base, cfg, seed);
    const auto train = seeded(cfg.train, seed);
    const auto dir = seed_dir(cfg.output, cfg.method, seed);
    Outputs out;
    if (cfg.method == "majority") {
      out = run_majority(ds, cfg, seed, dir);
    } else if (cfg.method == "ft-wl") {
      out = finish_trained(ds, ft_wl(ds, train), cfg, dir);
    } else {
      auto teacher = teacher_init(ds, train);
      auto report = cfg.method == "msr" ? msr_train(ds, teacher, train) : ft_wlst(ds, teacher, train);
      out = finish_trained(ds, report, cfg, dir);
    }
    rows[i] = SeedResult{seed, out.metrics};
  });

  Json summary;
  summary["method"] = cfg.method;
  summary["config"] = cfg.to_json();
  summary.update(summary_block(rows));
  std::filesystem::create_directories(cfg.output / cfg.method);
  write_text(cfg.output / cfg.method / "summary.json", summary.dump(2) + "\n");
  return summary;
}

Json run_ablation(const ExperimentConfig& cfg) {
  cfg.validate();
  struct Variant {
    const char* name;
    bool scheduler;
    bool filter;
  };
  const std::vector<Variant> variants{{"msr", true, true},
                                      {"msr-no-scheduler", false, true},
                                      {"msr-no-filter", true, false},
                                      {"msr-no-scheduler-no-filter", false, false}};
  const WeakDataset base = load_experiment_data(cfg);
  std::vector<std::vector<SeedResult>> rows(variants.size(), std::vector<SeedResult>(cfg.seeds.size()));
  std::vector<SeedResult> init_rows(cfg.seeds.size());
  parallel_for(cfg.seeds.size(), cfg.workers, [&](std::size_t i) {
    const auto seed = cfg.seeds[i];
    const auto ds = prepare(base, cfg, seed);
    const auto teacher = teacher_init(ds, seeded(cfg.train, seed));
    Json init;
    init["test_accuracy"] = *accuracy(teacher, ds, ds.indices(Split::Test));
    init["valid_accuracy"] = *accuracy(teacher, ds, ds.indices(Split::Validation));
    init_rows[i] = SeedResult{seed, init};
    for (std::size_t v = 0; v < variants.size(); ++v) {
      auto vcfg = cfg;
      vcfg.method = "msr";
      vcfg.train.use_scheduler = variants[v].scheduler;
      vcfg.train.use_filter = variants[v].filter;
      auto report = msr_train(ds, teacher, seeded(vcfg.train, seed));
      auto out = finish_trained(ds, report, vcfg, seed_dir(cfg.output, variants[v].name, seed));
      rows[v][i] = SeedResult{seed, out.metrics};
    }
  });

  Json summary;
  summary["method"] = "ablation";
  summary["config"] = cfg.to_json();
  Json init = summary_block(init_rows);
  summary["teacher_init"] = init;
  auto table = Json::array();
  for (std::size_t v = 0; v < variants.size(); ++v) {
    Json entry;
    entry["variant"] = variants[v].name;
    entry["use_scheduler"] = variants[v].scheduler;
    entry["use_filter"] = variants[v].filter;
    entry.update(summary_block(rows[v]));
    table.push_back(entry);
  }
  summary["variants"] = table;
  std::filesystem::create_directories(cfg.output);
  write_text(cfg.output / "summary.json", summary.dump(2) + "\n");
  return summary;
}

int run_command(const ExperimentConfig& cfg) {
  return guarded([&] { run_experiment(cfg); });
}

int ablate_command(const ExperimentConfig& cfg) {
  return guarded([&] { run_ablation(cfg); });
}

}  // namespace msr
