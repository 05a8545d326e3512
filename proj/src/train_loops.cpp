#include "msr/train_loops.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace msr {

void TrainConfig::validate() const {
  if (!(student_rate > 0.0) || !(init_rate > 0.0)) {
    throw std::invalid_argument("train: student_rate and init_rate must be positive");
  }
  if (!(teacher_rate >= 0.0)) throw std::invalid_argument("train: teacher_rate must be >= 0");
  if (steps < 1 || init_steps < 1) throw std::invalid_argument("train: steps must be >= 1");
  if (!(tau >= 0.0) || !std::isfinite(tau)) throw std::invalid_argument("train: tau must be >= 0");
  if (batch < 1 || valid_batch < 1) throw std::invalid_argument("train: batch sizes must be >= 1");
  if (warmup < 0 || warmup >= steps) {
    throw std::invalid_argument("train: warmup must be in [0, steps)");
  }
  if (patience < 0) throw std::invalid_argument("train: patience must be >= 0");
  if (eval_every < 1) throw std::invalid_argument("train: eval_every must be >= 1");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("train: weight_decay must be >= 0");
  for (auto h : hidden) {
    if (h == 0) throw std::invalid_argument("train: hidden widths must be positive");
  }
}

Architecture TrainConfig::architecture(const WeakDataset& ds) const {
  Architecture arch{ds.dim, hidden, ds.classes};
  arch.validate();
  return arch;
}

nlohmann::ordered_json TrainConfig::to_json() const {
  nlohmann::ordered_json j;
  j["student_rate"] = student_rate;
  j["teacher_rate"] = teacher_rate;
  j["init_rate"] = init_rate;
  j["steps"] = steps;
  j["init_steps"] = init_steps;
  j["tau"] = tau;
  j["batch"] = batch;
  j["valid_batch"] = valid_batch;
  j["warmup"] = warmup;
  j["seed"] = seed;
  j["use_scheduler"] = use_scheduler;
  j["use_filter"] = use_filter;
  j["patience"] = patience;
  j["eval_every"] = eval_every;
  j["hidden"] = hidden;
  j["weight_decay"] = weight_decay;
  j["soft_pseudo_labels"] = soft_pseudo_labels;
  return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::ordered_json& j) {
  TrainConfig c;
  c.student_rate = j.value("student_rate", c.student_rate);
  c.teacher_rate = j.value("teacher_rate", c.teacher_rate);
  c.init_rate = j.value("init_rate", c.init_rate);
  c.steps = j.value("steps", c.steps);
  c.init_steps = j.value("init_steps", c.init_steps);
  c.tau = j.value("tau", c.tau);
  c.batch = j.value("batch", c.batch);
  c.valid_batch = j.value("valid_batch", c.valid_batch);
  c.warmup = j.value("warmup", c.warmup);
  c.seed = j.value("seed", c.seed);
  c.use_scheduler = j.value("use_scheduler", c.use_scheduler);
  c.use_filter = j.value("use_filter", c.use_filter);
  c.patience = j.value("patience", c.patience);
  c.eval_every = j.value("eval_every", c.eval_every);
  c.hidden = j.value("hidden", c.hidden);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.soft_pseudo_labels = j.value("soft_pseudo_labels", c.soft_pseudo_labels);
  c.validate();
  return c;
}

namespace {

nlohmann::ordered_json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

nlohmann::ordered_json accuracy_json(const SplitAccuracy& a) {
  return {{"train", optional_json(a.train)}, {"valid", a.valid}, {"test", a.test}};
}

nlohmann::ordered_json eval_json(const EvalPoint& p) {
  nlohmann::ordered_json j;
  j["step"] = p.step;
  j["student"] = accuracy_json(p.student);
  j["teacher"] = p.teacher ? accuracy_json(*p.teacher) : nlohmann::ordered_json(nullptr);
  j["keep_rate"] = p.keep_rate;
  return j;
}

}  // namespace

nlohmann::ordered_json TrainReport::to_json(bool timing) const {
  nlohmann::ordered_json j;
  j["method"] = method;
  j["config"] = config.to_json();
  j["steps_run"] = steps_run;
  j["best_step"] = best_step;
  j["best"] = eval_json(best);
  auto trace_json = nlohmann::ordered_json::array();
  for (const auto& p : trace) trace_json.push_back(eval_json(p));
  j["trace"] = trace_json;
  j["keep_trace"] = keep_trace;
  nlohmann::ordered_json ckpt;
  ckpt["student_final"] = student_final.to_json();
  ckpt["student_best"] = student_best.to_json();
  ckpt["student_optimizer"] =
      student_optimizer ? student_optimizer->to_json() : nlohmann::ordered_json(nullptr);
  ckpt["teacher_final"] = teacher_final ? teacher_final->to_json() : nlohmann::ordered_json(nullptr);
  ckpt["teacher_best"] = teacher_best ? teacher_best->to_json() : nlohmann::ordered_json(nullptr);
  ckpt["teacher_optimizer"] =
      teacher_optimizer ? teacher_optimizer->to_json() : nlohmann::ordered_json(nullptr);
  j["checkpoint"] = ckpt;
  if (timing) j["wall_seconds"] = wall_seconds;
  return j;
}

std::mt19937_64 make_rng(std::uint64_t seed, RngStream stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), 0x6d7372u};
  return std::mt19937_64(seq);
}

EpochSampler::EpochSampler(std::vector<std::size_t> pool, std::mt19937_64 rng)
    : pool_(std::move(pool)), order_(pool_), cursor_(pool_.size()), rng_(rng) {
  if (pool_.empty()) throw std::invalid_argument("sampler: empty pool");
}

std::vector<std::size_t> EpochSampler::next(std::size_t count) {
  std::vector<std::size_t> out;
  out.reserve(count);
  while (out.size() < count) {
    if (cursor_ == order_.size()) {
      order_ = pool_;
      std::shuffle(order_.begin(), order_.end(), rng_);
      cursor_ = 0;
    }
    out.push_back(order_[cursor_++]);
  }
  return out;
}

MetaGradient teacher_meta_gradient(const ParamSet& teacher, const ParamSet& student,
                                   const ad::Tensor& x, const ad::Tensor& x_valid,
                                   const ad::Tensor& y_valid, double rate,
                                   const ModelFn& teacher_model, const ModelFn& student_model) {
  ad::Tape tape;
  auto f = teacher.attached(tape);
  auto g = student.attached(tape);
  auto inner = cross_entropy(teacher_model(f, x), student_model(g, x));
  auto virtual_student = sgd_virtual_step(g, inner, rate);
  auto loss = cross_entropy(y_valid, student_model(virtual_student, x_valid));
  MetaGradient out;
  out.validation_loss = loss.item();
  out.teacher_grad = tape.grad(loss, f.tensors());
  return out;
}

double virtual_validation_loss(const ParamSet& teacher, const ParamSet& student,
                               const ad::Tensor& x, const ad::Tensor& x_valid,
                               const ad::Tensor& y_valid, double rate,
                               const ModelFn& teacher_model, const ModelFn& student_model) {
  ad::Tape tape;
  auto g = student.attached(tape);
  auto inner = cross_entropy(teacher_model(teacher.detached(), x), student_model(g, x));
  auto virtual_student = sgd_virtual_step(g, inner, rate);
  return cross_entropy(y_valid, student_model(virtual_student, x_valid)).item();
}

std::optional<double> accuracy(const ParamSet& params, const WeakDataset& ds,
                               std::span<const std::size_t> rows) {
  std::vector<std::size_t> judged;
  for (auto i : rows) {
    if (ds.gold[i] != kAbstain) judged.push_back(i);
  }
  if (judged.empty()) return std::nullopt;
  auto pred = argmax_rows(forward(params.detached(), ds.feature_matrix(judged)));
  std::size_t correct = 0;
  for (std::size_t r = 0; r < judged.size(); ++r) correct += pred[r] == ds.gold[judged[r]];
  return static_cast<double>(correct) / static_cast<double>(judged.size());
}

namespace {

using Clock = std::chrono::steady_clock;

// Cached evaluation inputs for one dataset.
class Evaluator {
 public:
  explicit Evaluator(const WeakDataset& ds) {
    for (auto i : ds.indices(Split::Train)) {
      if (ds.gold[i] != kAbstain) train_.push_back(i);
    }
    valid_ = ds.indices(Split::Validation);
    test_ = ds.indices(Split::Test);
    for (auto* rows : {&train_, &valid_, &test_}) {
      x_.push_back(ds.feature_matrix(*rows));
      y_.push_back(ds.gold_labels(*rows));
    }
  }

  SplitAccuracy operator()(const ParamSet& params) const {
    SplitAccuracy a;
    a.train = score(params, 0);
    a.valid = score(params, 1).value_or(0.0);
    a.test = score(params, 2).value_or(0.0);
    return a;
  }

 private:
  std::optional<double> score(const ParamSet& params, std::size_t split) const {
    if (y_[split].empty()) return std::nullopt;
    auto pred = argmax_rows(forward(params, x_[split]));
    std::size_t correct = 0;
    for (std::size_t r = 0; r < pred.size(); ++r) correct += pred[r] == y_[split][r];
    return static_cast<double>(correct) / static_cast<double>(pred.size());
  }

  std::vector<std::size_t> train_, valid_, test_;
  std::vector<ad::Tensor> x_;
  std::vector<std::vector<int>> y_;
};

void require_validation(const WeakDataset& ds) {
  for (auto i : ds.indices(Split::Validation)) {
    if (ds.gold[i] == kAbstain) throw DataError("validation row " + ds.ids[i] + " has no gold label");
  }
  if (ds.indices(Split::Validation).empty()) throw DataError("empty validation split");
}

// Targets gathered row-wise from an n x k matrix.
ad::Tensor gather_rows(const ad::Tensor& m, std::span<const std::size_t> rows) {
  std::vector<double> v;
  v.reserve(rows.size() * m.cols());
  for (auto r : rows) {
    auto row = m.row(r);
    v.insert(v.end(), row.begin(), row.end());
  }
  return ad::Tensor(rows.size(), m.cols(), std::move(v));
}

// One AdamW step on sum_i w_i CE(target_i, g(x_i)) / batch.
std::pair<ParamSet, AdamWState> student_update(const ParamSet& student, const AdamWState& state,
                                               const ad::Tensor& x, const ad::Tensor& targets,
                                               std::span<const double> weights, double rate,
                                               std::int64_t step) {
  ad::Tape tape;
  auto g = student.attached(tape);
  auto loss = weighted_cross_entropy(targets, forward(g, x), weights);
  if (!std::isfinite(loss.item())) throw TrainingError(step, "non-finite student loss");
  auto grads = tape.grad(loss, g.tensors());
  return adamw_step(state, student, grads, rate);
}

// Early-stopping bookkeeping shared by every loop.
class Tracker {
 public:
  Tracker(TrainReport& report, const Evaluator& eval, std::int64_t patience)
      : report_(report), eval_(eval), patience_(patience) {}

  // Returns true when training should stop.
  bool record(std::int64_t step, const ParamSet& student, const ParamSet* teacher,
              double keep_rate) {
    EvalPoint p;
    p.step = step;
    p.student = eval_(student);
    if (teacher) p.teacher = eval_(*teacher);
    p.keep_rate = keep_rate;
    report_.trace.push_back(p);
    if (report_.trace.size() == 1 || p.student.valid > report_.best.student.valid) {
      report_.best = p;
      report_.best_step = step;
      report_.student_best = student;
      if (teacher) report_.teacher_best = *teacher;
      stale_ = 0;
      return false;
    }
    ++stale_;
    return patience_ > 0 && stale_ >= patience_;
  }

 private:
  TrainReport& report_;
  const Evaluator& eval_;
  std::int64_t patience_;
  std::int64_t stale_ = 0;
};

// Plain AdamW on fixed targets (one row of `targets` per entry of `pool`),
// drawing batches from `pool` and keeping the best-validation checkpoint.
TrainReport supervised(const WeakDataset& ds, const std::vector<std::size_t>& pool,
                       const ad::Tensor& targets, ParamSet params, const TrainConfig& cfg,
                       double rate, std::int64_t steps, RngStream batch_stream,
                       std::string method, const ParamSet* fixed_teacher, double keep_rate) {
  auto start = Clock::now();
  Evaluator eval(ds);
  TrainReport report;
  report.method = std::move(method);
  report.config = cfg;
  AdamWState state = AdamWState::for_params(params, {0.9, 0.999, 1e-8, cfg.weight_decay});

  std::vector<std::size_t> positions(pool.size());
  std::iota(positions.begin(), positions.end(), 0);
  EpochSampler sampler(positions, make_rng(cfg.seed, batch_stream));
  const std::vector<double> ones(cfg.batch, 1.0);

  Tracker tracker(report, eval, cfg.patience);
  tracker.record(0, params, fixed_teacher, keep_rate);
  std::int64_t t = 1;
  for (; t <= steps; ++t) {
    auto picks = sampler.next(cfg.batch);
    std::vector<std::size_t> rows(picks.size());
    for (std::size_t r = 0; r < picks.size(); ++r) rows[r] = pool[picks[r]];
    try {
      std::tie(params, state) = student_update(params, state, ds.feature_matrix(rows),
                                               gather_rows(targets, picks), ones, rate, t);
    } catch (const ad::NumericError& e) {
      throw TrainingError(t, e.what());
    }
    report.keep_trace.push_back(keep_rate);
    if (t % cfg.eval_every == 0 || t == steps) {
      if (tracker.record(t, params, fixed_teacher, keep_rate)) break;
    }
  }
  report.steps_run = std::min(t, steps);
  report.student_final = params;
  report.student_optimizer = state;
  if (fixed_teacher) {
    report.teacher_final = *fixed_teacher;
    report.teacher_best = *fixed_teacher;
  }
  report.wall_seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return report;
}

TrainReport train_on_weak_labels(const WeakDataset& ds, const TrainConfig& cfg, RngStream init,
                                 RngStream batches, double rate, std::int64_t steps,
                                 std::string method) {
  cfg.validate();
  require_validation(ds);
  auto pool = ds.weakly_labeled();
  if (pool.empty()) throw DataError("no weakly labeled training rows");
  auto rng = make_rng(cfg.seed, init);
  auto params = ParamSet::initialize(cfg.architecture(ds), rng);
  auto targets = one_hot(ds.weak_labels(pool), ds.classes);
  return supervised(ds, pool, targets, params, cfg, rate, steps, batches, std::move(method),
                    nullptr, 1.0);
}

}  // namespace

ParamSet teacher_init(const WeakDataset& ds, const TrainConfig& cfg) {
  return train_on_weak_labels(ds, cfg, RngStream::TeacherInit, RngStream::InitBatches,
                              cfg.init_rate, cfg.init_steps, "teacher-init")
      .student_best;
}

TrainReport ft_wl(const WeakDataset& ds, const TrainConfig& cfg) {
  return train_on_weak_labels(ds, cfg, RngStream::StudentInit, RngStream::TrainBatches,
                              cfg.init_rate, cfg.steps, "ft-wl");
}

TrainReport ft_wlst(const WeakDataset& ds, const ParamSet& teacher, const TrainConfig& cfg) {
  cfg.validate();
  require_validation(ds);
  auto train = ds.indices(Split::Train);
  if (train.empty()) throw DataError("empty training split");
  auto probs = forward(teacher.detached(), ds.feature_matrix(train));
  auto conf = confidence(probs);
  std::vector<std::size_t> keep;
  std::vector<std::size_t> keep_pos;
  for (std::size_t r = 0; r < train.size(); ++r) {
    if (conf[r] >= cfg.tau) {
      keep.push_back(train[r]);
      keep_pos.push_back(r);
    }
  }
  if (keep.empty()) throw TrainingError(0, "confidence filter keeps no samples");
  ad::Tensor targets = cfg.soft_pseudo_labels ? gather_rows(probs, keep_pos)
                                              : one_hot(argmax_rows(gather_rows(probs, keep_pos)),
                                                        ds.classes);
  auto rng = make_rng(cfg.seed, RngStream::StudentInit);
  auto student = ParamSet::initialize(cfg.architecture(ds), rng);
  const double keep_rate = static_cast<double>(keep.size()) / static_cast<double>(train.size());
  auto fixed = teacher.detached();
  return supervised(ds, keep, targets, student, cfg, cfg.student_rate, cfg.steps,
                    RngStream::TrainBatches, "ft-wlst", &fixed, keep_rate);
}

TrainReport msr_train(const WeakDataset& ds, const ParamSet& initial_teacher,
                      const TrainConfig& cfg) {
  cfg.validate();
  require_validation(ds);
  auto start = Clock::now();
  auto train = ds.indices(Split::Train);
  if (train.empty()) throw DataError("empty training split");
  auto valid = ds.indices(Split::Validation);

  Evaluator eval(ds);
  TrainReport report;
  report.method = "msr";
  report.config = cfg;

  const AdamWOptions opts{0.9, 0.999, 1e-8, cfg.weight_decay};
  ParamSet teacher = initial_teacher.detached();
  auto init_rng = make_rng(cfg.seed, RngStream::StudentInit);
  ParamSet student = ParamSet::initialize(cfg.architecture(ds), init_rng);
  if (!(teacher.architecture().input_dim == ds.dim && teacher.architecture().classes == ds.classes)) {
    throw ad::ShapeError("msr: teacher architecture does not match the dataset");
  }
  AdamWState teacher_state = AdamWState::for_params(teacher, opts);
  AdamWState student_state = AdamWState::for_params(student, opts);

  EpochSampler batches(train, make_rng(cfg.seed, RngStream::TrainBatches));
  EpochSampler valid_batches(valid, make_rng(cfg.seed, RngStream::ValidBatches));
  const bool teacher_moves = cfg.teacher_rate > 0.0;
  std::optional<TeacherSchedule> schedule;
  if (teacher_moves) schedule.emplace(cfg.teacher_rate, cfg.steps - cfg.warmup);

  Tracker tracker(report, eval, cfg.patience);
  tracker.record(0, student, &teacher, 1.0);
  double keep_sum = 0.0;
  std::int64_t keep_count = 0;
  std::int64_t t = 1;
  for (; t <= cfg.steps; ++t) {
    try {
      auto rows = batches.next(cfg.batch);
      auto x = ds.feature_matrix(rows);
      if (teacher_moves && t > cfg.warmup) {
        auto vrows = valid_batches.next(cfg.valid_batch);
        auto meta = teacher_meta_gradient(teacher, student, x, ds.feature_matrix(vrows),
                                          one_hot(ds.gold_labels(vrows), ds.classes),
                                          cfg.student_rate);
        if (!std::isfinite(meta.validation_loss)) throw TrainingError(t, "non-finite validation loss");
        const double rate = cfg.use_scheduler ? schedule->rate(t - cfg.warmup) : cfg.teacher_rate;
        std::tie(teacher, teacher_state) = adamw_step(teacher_state, teacher, meta.teacher_grad, rate);
      }
      auto soft = forward(teacher, x);
      std::vector<double> weights(rows.size(), 1.0);
      if (cfg.use_filter) {
        auto conf = confidence(soft);
        for (std::size_t r = 0; r < rows.size(); ++r) weights[r] = conf[r] >= cfg.tau ? 1.0 : 0.0;
      }
      const double kept = std::accumulate(weights.begin(), weights.end(), 0.0);
      const double keep_rate = kept / static_cast<double>(rows.size());
      report.keep_trace.push_back(keep_rate);
      keep_sum += keep_rate;
      ++keep_count;
      if (kept > 0.0) {
        std::tie(student, student_state) =
            student_update(student, student_state, x, soft, weights, cfg.student_rate, t);
      }
      if (t % cfg.eval_every == 0 || t == cfg.steps) {
        bool stop = tracker.record(t, student, &teacher, keep_sum / static_cast<double>(keep_count));
        keep_sum = 0.0;
        keep_count = 0;
        if (stop) break;
      }
    } catch (const ad::NumericError& e) {
      throw TrainingError(t, e.what());
    }
  }
  report.steps_run = std::min(t, cfg.steps);
  report.student_final = student;
  report.teacher_final = teacher;
  report.student_optimizer = student_state;
  report.teacher_optimizer = teacher_state;
  report.wall_seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return report;
}

}  // namespace msr
