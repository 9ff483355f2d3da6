#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "wecar/distill/distill.hpp"
#include "wecar/model/model.hpp"
#include "wecar/model/stable_mlp.hpp"

namespace wecar::train {

/// How a new task's prefix block is initialised.
enum class PrefixInit { Adapter, Zero, Random };

PrefixInit parse_prefix_init(const std::string& s);
std::string to_string(PrefixInit p);

struct TrainConfig {
  model::ModelConfig model;
  std::size_t epochs = 50;
  std::size_t batch = 4;
  double lr = 1e-3;
  model::EpsilonRule epsilon;
  PrefixInit prefix_init = PrefixInit::Adapter;
  double random_prefix_std = 0.1;
  /// Keep the Gaussian encoding trainable after the first task.
  bool train_encoding_after_first = false;
  /// Incremental cross-entropy over the newest task's classes only.
  bool task_local_ce = true;
  bool distill_enabled = true;
  distill::DistillConfig distill;
  std::uint64_t seed = 7;
  double test_fraction = 0.25;

  void validate() const;
};

/// Keys: n, d, heads, ranges, sigma, prefix_len, adapter_rank, mlp_widths,
/// dropout, epochs, batch, lr, epsilon (number or "p<percentile>"),
/// prefix_init, random_prefix_std, train_encoding_after_first,
/// task_local_ce, distill_enabled, seed, test_fraction, and a "distill"
/// object with lambda_at, lambda_vr, lambda_log, lambda_p, lambda_ce,
/// epochs, batch, lr, rho, task_local_ce. Missing keys keep their defaults,
/// except that distill epochs, batch, lr and dropout follow the top-level
/// values unless given. Unknown keys are rejected.
TrainConfig config_from_json(const nlohmann::json& j, TrainConfig base = {});
nlohmann::ordered_json config_to_json(const TrainConfig& cfg);
TrainConfig load_config(const std::filesystem::path& path, TrainConfig base = {});

}  // namespace wecar::train
