#pragma once

#include <chrono>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wecar/data/dataset.hpp"
#include "wecar/data/schedule.hpp"
#include "wecar/model/model.hpp"
#include "wecar/train/config.hpp"
#include "wecar/train/loop.hpp"
#include "wecar/train/metrics.hpp"

namespace wecar::train {

/// Source of initial values for each new task's prefix block. The two
/// adapters are drawn once per session and stay fixed. Random prefixes come
/// from a private generator, so the training stream does not depend on the
/// initialisation mode.
struct PrefixInitializer {
  PrefixInit mode = PrefixInit::Adapter;
  double random_std = 0.1;
  model::ParallelAdapter key_adapter;
  model::ParallelAdapter value_adapter;
  core::Rng random_rng;

  static PrefixInitializer create(const TrainConfig& cfg, core::Rng& rng);
  /// `encoded` are the task's inputs after the range encoding.
  model::PrefixBlock make(std::span<const core::Tensor2> encoded, std::size_t p, std::size_t heads,
                          std::size_t task_id);
};

/// Appends classifier rows for `new_classes`.
void grow_classifier(model::Model& m, std::span<const std::size_t> new_classes, core::Rng& rng);

/// Task 1: pushes the task-1 prefix block, grows the classifier and trains
/// every parameter with cross-entropy. Afterwards the attention (and, unless
/// configured otherwise, the encoding) is frozen, the block is frozen and the
/// MLP activations on the task data are recorded.
std::vector<double> train_initial(model::Model& m, std::span<const std::size_t> classes,
                                  std::span<const Example> data, const TrainConfig& cfg,
                                  PrefixInitializer& init, core::Rng& rng);

/// Task t >= 2: stable-neuron update, new prefix block, classifier growth,
/// then training of the new block, the unmasked MLP entries and the
/// classifier. The block is frozen afterwards.
std::vector<double> train_incremental(model::Model& m, std::span<const std::size_t> classes,
                                      std::span<const Example> data, const TrainConfig& cfg,
                                      PrefixInitializer& init, core::Rng& rng);

/// Plain fine-tuning: no prefixes, no masks, every parameter trainable,
/// cross-entropy over all seen classes.
std::vector<double> train_naive(model::Model& m, std::span<const std::size_t> classes,
                                std::span<const Example> data, const TrainConfig& cfg,
                                core::Rng& rng);

/// Predictions use the argmax over every seen class.
EvalCount evaluate_counts(const model::Model& m, std::span<const Example> test);
/// Throws ConfigError on an empty test set.
double evaluate(const model::Model& m, std::span<const Example> test);

/// Per-task data after the train/test split.
struct TaskData {
  std::vector<std::size_t> classes;
  std::vector<Example> train;
  std::vector<Example> test;
};

std::vector<TaskData> split_tasks(const data::Dataset& ds, const data::TaskSchedule& schedule,
                                  double test_fraction, std::uint64_t seed);

struct ArmResult {
  AlphaMatrix alpha;
  std::vector<double> incremental;  // A_t
  double average = 0.0;
  std::optional<double> forgetting;
  std::size_t parameters = 0;
};

struct StageTiming {
  std::size_t task = 0;
  std::string stage;
  double seconds = 0.0;
};

struct SessionResult {
  data::TaskSchedule schedule;
  ArmResult fsm;
  std::optional<ArmResult> lwm;
  std::optional<ArmResult> naive;
  std::vector<StageTiming> timings;
};

/// Tracks the full and light models through consecutive tasks.
class ContinualSession {
 public:
  explicit ContinualSession(TrainConfig cfg);

  /// Runs the full-model stage for the next task, then the light-model
  /// stage when distillation is enabled.
  void learn_task(std::span<const std::size_t> classes, std::span<const Example> train);

  std::size_t tasks_done() const { return fsm_.task_index; }
  const model::Model& fsm() const { return fsm_; }
  const std::optional<model::Model>& lwm() const { return lwm_; }
  const TrainConfig& config() const { return cfg_; }
  const std::vector<StageTiming>& timings() const { return timings_; }

 private:
  TrainConfig cfg_;
  core::Rng rng_;
  core::Rng distill_rng_;
  PrefixInitializer init_;
  model::Model fsm_;
  std::optional<model::Model> lwm_;
  std::vector<StageTiming> timings_;
};

struct SessionOptions {
  bool run_naive = false;
  /// Called after each task with the task index (1-based) and the session.
  std::function<void(std::size_t, const ContinualSession&)> on_task;
};

/// Full session: every task through both lifecycles, with evaluation of each
/// model on all tasks seen so far after every task.
SessionResult run_session(const data::Dataset& ds, const data::TaskSchedule& schedule,
                          const TrainConfig& cfg, const SessionOptions& opts = {});

}  // namespace wecar::train
