#include "wecar/train/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <set>
#include <string>

#include "wecar/core/errors.hpp"
#include "wecar/core/ops.hpp"
#include "wecar/distill/distill.hpp"

namespace wecar::train {

PrefixInitializer PrefixInitializer::create(const TrainConfig& cfg, core::Rng& rng) {
  PrefixInitializer p;
  p.mode = cfg.prefix_init;
  p.random_std = cfg.random_prefix_std;
  const std::size_t r = cfg.model.resolved_adapter_rank();
  p.key_adapter = model::ParallelAdapter::create(cfg.model.d, r, rng);
  p.value_adapter = model::ParallelAdapter::create(cfg.model.d, r, rng);
  p.random_rng.seed(cfg.seed ^ 0x5851f42d4c957f2dULL);
  return p;
}

model::PrefixBlock PrefixInitializer::make(std::span<const core::Tensor2> encoded, std::size_t p,
                                           std::size_t heads, std::size_t task_id) {
  if (encoded.empty()) throw ConfigError("prefix init: empty task data");
  const std::size_t d = encoded.front().cols();
  switch (mode) {
    case PrefixInit::Adapter:
      return model::adapter_init_prefix(key_adapter, value_adapter, encoded, p, heads, task_id);
    case PrefixInit::Zero:
      return model::make_prefix_block(task_id, core::Tensor2(p, d), core::Tensor2(p, d), heads);
    case PrefixInit::Random: {
      auto k = core::random_normal(p, d, random_std, random_rng);
      auto v = core::random_normal(p, d, random_std, random_rng);
      return model::make_prefix_block(task_id, k, v, heads);
    }
  }
  throw StateError("prefix init: unknown mode");
}

void grow_classifier(model::Model& m, std::span<const std::size_t> new_classes, core::Rng& rng) {
  m.classifier.grow(new_classes, rng);
}

namespace {

void check_task(std::span<const std::size_t> classes, std::span<const Example> data) {
  if (classes.empty()) throw ConfigError("task has no classes");
  if (data.empty()) throw ConfigError("task has no training data");
  for (const auto& ex : data) {
    if (std::find(classes.begin(), classes.end(), ex.class_id) == classes.end()) {
      throw ConfigError("example of class " + std::to_string(ex.class_id) +
                        " is outside the task's classes");
    }
  }
}

std::vector<core::Tensor2> encode_all(const model::Model& m, std::span<const Example> data) {
  std::vector<core::Tensor2> out;
  out.reserve(data.size());
  for (const auto& ex : data) out.push_back(m.encoding.encode(ex.x));
  return out;
}

std::vector<std::vector<double>> layer_averages(const model::Model& m,
                                                std::span<const Example> data) {
  std::vector<std::vector<core::Tensor2>> per_layer(m.mlp.size());
  for (const auto& ex : data) {
    auto acts = m.mlp_activations(ex.x);
    for (std::size_t l = 0; l < acts.size(); ++l) per_layer[l].push_back(std::move(acts[l]));
  }
  std::vector<std::vector<double>> out;
  for (const auto& acts : per_layer) out.push_back(model::average_activations(acts));
  return out;
}

void record_activations(model::Model& m, std::span<const Example> data) {
  auto avgs = layer_averages(m, data);
  for (std::size_t l = 0; l < m.mlp.size(); ++l) m.mlp[l].last_avg_activation = std::move(avgs[l]);
}

std::vector<double> fit_ce(model::Model& m, std::span<const Example> data, std::size_t ce_begin,
                           const TrainConfig& cfg, core::Rng& rng) {
  std::vector<std::size_t> labels;
  for (const auto& ex : data) labels.push_back(*m.classifier.index_of(ex.class_id));
  auto loss = [&](core::Tape& tape, const model::ModelVars& vars, std::size_t i,
                  const model::ForwardMode& mode) {
    auto tr = m.forward(vars, tape.constant(data[i].x), mode);
    const std::size_t lab[] = {labels[i]};
    return core::softmax_cross_entropy(tr.logits, lab, ce_begin);
  };
  const LoopOptions opts{
      .epochs = cfg.epochs, .batch = cfg.batch, .lr = cfg.lr, .dropout = cfg.model.dropout};
  return fit(m, data.size(), loss, opts, rng);
}

}  // namespace

std::vector<double> train_initial(model::Model& m, std::span<const std::size_t> classes,
                                  std::span<const Example> data, const TrainConfig& cfg,
                                  PrefixInitializer& init, core::Rng& rng) {
  check_task(classes, data);
  if (m.task_index != 0) throw StateError("train_initial: model already trained");
  grow_classifier(m, classes, rng);
  const auto encoded = encode_all(m, data);
  m.prefixes.push(init.make(encoded, cfg.model.prefix_len, cfg.model.heads, 1));
  for (auto* p : m.parameters()) p->trainable = true;

  auto losses = fit_ce(m, data, 0, cfg, rng);

  m.attention.freeze();
  if (!cfg.train_encoding_after_first) m.encoding.set_trainable(false);
  m.prefixes.freeze_and_accumulate(1);
  record_activations(m, data);
  m.task_index = 1;
  return losses;
}

std::vector<double> train_incremental(model::Model& m, std::span<const std::size_t> classes,
                                      std::span<const Example> data, const TrainConfig& cfg,
                                      PrefixInitializer& init, core::Rng& rng) {
  check_task(classes, data);
  if (m.task_index == 0) throw StateError("train_incremental: initial stage has not run");
  const std::size_t t = m.task_index + 1;

  const auto avgs = layer_averages(m, data);
  for (std::size_t l = 0; l < m.mlp.size(); ++l) {
    model::selective_retrain_hook(m.mlp[l], avgs[l], t, cfg.epsilon);
  }

  const std::size_t first_new = m.classifier.size();
  grow_classifier(m, classes, rng);
  const auto encoded = encode_all(m, data);
  m.prefixes.push(init.make(encoded, cfg.model.prefix_len, cfg.model.heads, t));

  m.encoding.set_trainable(cfg.train_encoding_after_first);
  m.attention.freeze();
  for (auto& layer : m.mlp) layer.weight.trainable = layer.bias.trainable = true;
  m.classifier.weight.trainable = m.classifier.bias.trainable = true;

  auto losses = fit_ce(m, data, cfg.task_local_ce ? first_new : 0, cfg, rng);

  m.prefixes.freeze_and_accumulate(t);
  record_activations(m, data);
  m.task_index = t;
  return losses;
}

std::vector<double> train_naive(model::Model& m, std::span<const std::size_t> classes,
                                std::span<const Example> data, const TrainConfig& cfg,
                                core::Rng& rng) {
  check_task(classes, data);
  grow_classifier(m, classes, rng);
  for (auto* p : m.parameters()) p->trainable = true;
  auto losses = fit_ce(m, data, 0, cfg, rng);
  m.task_index += 1;
  return losses;
}

EvalCount evaluate_counts(const model::Model& m, std::span<const Example> test) {
  EvalCount c;
  for (const auto& ex : test) {
    if (m.predict(ex.x) == ex.class_id) ++c.correct;
    ++c.total;
  }
  return c;
}

double evaluate(const model::Model& m, std::span<const Example> test) {
  return evaluate_counts(m, test).accuracy();
}

std::vector<TaskData> split_tasks(const data::Dataset& ds, const data::TaskSchedule& schedule,
                                  double test_fraction, std::uint64_t seed) {
  if (schedule.num_classes() != ds.num_classes) {
    throw ConfigError("schedule covers " + std::to_string(schedule.num_classes()) +
                      " classes, dataset has " + std::to_string(ds.num_classes));
  }
  const auto [train_ds, test_ds] = data::split_train_test(ds, test_fraction, seed);
  std::vector<TaskData> out;
  for (const auto& classes : schedule.tasks) {
    TaskData td;
    td.classes = classes;
    td.train = to_examples(train_ds, classes);
    td.test = to_examples(test_ds, classes);
    if (td.train.empty() || td.test.empty()) {
      throw ConfigError("a task has an empty train or test split");
    }
    out.push_back(std::move(td));
  }
  return out;
}

ContinualSession::ContinualSession(TrainConfig cfg)
    : cfg_(std::move(cfg)), rng_(cfg_.seed), distill_rng_(cfg_.seed ^ 0xd1b54a32d192ed03ULL) {
  cfg_.validate();
  init_ = PrefixInitializer::create(cfg_, rng_);
  fsm_ = model::Model::create(model::ModelKind::Full, cfg_.model, rng_);
}

namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

void ContinualSession::learn_task(std::span<const std::size_t> classes,
                                  std::span<const Example> train) {
  const std::size_t t = tasks_done() + 1;
  auto start = std::chrono::steady_clock::now();
  if (t == 1) {
    train_initial(fsm_, classes, train, cfg_, init_, rng_);
    timings_.push_back({t, "initial_training", seconds_since(start)});
  } else {
    train_incremental(fsm_, classes, train, cfg_, init_, rng_);
    timings_.push_back({t, "incremental_training", seconds_since(start)});
  }
  if (!cfg_.distill_enabled) return;
  start = std::chrono::steady_clock::now();
  if (t == 1) {
    lwm_ = distill::distill_initial(fsm_, cfg_.distill, train, distill_rng_);
    timings_.push_back({t, "initial_lightweight", seconds_since(start)});
  } else {
    lwm_ = distill::distill_incremental(fsm_, *lwm_, cfg_.distill, train, distill_rng_);
    timings_.push_back({t, "incremental_lightweight", seconds_since(start)});
  }
}

namespace {

struct ArmTracker {
  std::vector<std::vector<EvalCount>> counts;

  void record(const model::Model& m, std::span<const TaskData> tasks, std::size_t upto) {
    std::vector<EvalCount> row;
    for (std::size_t j = 0; j <= upto; ++j) row.push_back(evaluate_counts(m, tasks[j].test));
    counts.push_back(std::move(row));
  }

  ArmResult finish(std::size_t parameters) const {
    ArmResult r;
    for (const auto& row : counts) {
      std::vector<double> acc;
      for (const auto& c : row) acc.push_back(c.accuracy());
      r.alpha.push_back(std::move(acc));
      r.incremental.push_back(union_accuracy(row));
    }
    r.average = average_accuracy(r.incremental);
    r.forgetting = forgetting(r.alpha);
    r.parameters = parameters;
    return r;
  }
};

}  // namespace

SessionResult run_session(const data::Dataset& ds, const data::TaskSchedule& schedule,
                          const TrainConfig& cfg, const SessionOptions& opts) {
  TrainConfig c = cfg;
  c.model.n = ds.n;
  c.model.d = ds.d;
  c.validate();
  const auto tasks = split_tasks(ds, schedule, c.test_fraction, c.seed);

  ContinualSession session(c);
  ArmTracker fsm, lwm, naive;
  core::Rng naive_rng(c.seed ^ 0x9e3779b97f4a7c15ULL);
  std::optional<model::Model> naive_model;
  if (opts.run_naive) naive_model = model::Model::create(model::ModelKind::Full, c.model, naive_rng);

  SessionResult result;
  result.schedule = schedule;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    session.learn_task(tasks[t].classes, tasks[t].train);
    fsm.record(session.fsm(), tasks, t);
    if (session.lwm()) lwm.record(*session.lwm(), tasks, t);
    if (naive_model) {
      auto start = std::chrono::steady_clock::now();
      train_naive(*naive_model, tasks[t].classes, tasks[t].train, c, naive_rng);
      result.timings.push_back({t + 1, "naive_training", seconds_since(start)});
      naive.record(*naive_model, tasks, t);
    }
    if (opts.on_task) opts.on_task(t + 1, session);
  }
  result.fsm = fsm.finish(session.fsm().parameter_count());
  if (session.lwm()) result.lwm = lwm.finish(session.lwm()->parameter_count());
  if (naive_model) result.naive = naive.finish(naive_model->parameter_count());
  auto timings = session.timings();
  timings.insert(timings.end(), result.timings.begin(), result.timings.end());
  std::stable_sort(timings.begin(), timings.end(),
                   [](const StageTiming& a, const StageTiming& b) { return a.task < b.task; });
  result.timings = std::move(timings);
  return result;
}

}  // namespace wecar::train
