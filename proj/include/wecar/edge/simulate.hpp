#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "wecar/data/dataset.hpp"
#include "wecar/data/schedule.hpp"
#include "wecar/train/config.hpp"

namespace wecar::edge {

enum class SimMode { Tcp, InProcess };

struct SimulationOptions {
  SimMode mode = SimMode::InProcess;
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
  /// Drop the end's connection right after the last TRAIN_DONE, then
  /// reconnect with a fresh runtime and rely on the edge's re-push.
  bool fault_inject = false;
  std::size_t fidelity_inputs = 100;
  std::size_t batch_size = 32;
  /// Edge-side transcript (TCP mode runs the edge in a child process).
  std::optional<std::filesystem::path> edge_log;
};

struct SimulationResult {
  std::vector<std::uint32_t> pushes;  // task index of every installed push
  std::size_t fidelity_inputs = 0;
  std::size_t argmax_agree = 0;
  double max_logit_diff = 0.0;
  double end_accuracy = 0.0;
  std::uint32_t final_bundle_crc = 0;
  bool model_absent_before_push = false;
  std::vector<std::string> transcript;  // end side

  bool fidelity_ok() const { return argmax_agree == fidelity_inputs && max_logit_diff <= 1e-5; }
  nlohmann::ordered_json to_json() const;
};

/// Replays `schedule` through an edge and an end: each task's training data
/// is uploaded in batches, TRAIN_DONE triggers a push, and after each push
/// the end's local predictions are compared with the edge's on held-out
/// inputs (missing cells kept, so the end interpolates).
SimulationResult simulate(const data::Dataset& ds, const data::TaskSchedule& schedule,
                          const train::TrainConfig& cfg, const SimulationOptions& opts);

}  // namespace wecar::edge
