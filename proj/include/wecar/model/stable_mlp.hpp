#pragma once

#include <cstddef>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "wecar/core/tensor.hpp"

namespace wecar::model {

/// Dense ReLU layer, W is d_in x d_out. Tracks the per-neuron mean activation
/// seen at the previous task boundary and the accumulated set of stable
/// neurons, whose incoming weights (column j of W) and bias b[j] are frozen.
struct MlpLayer {
  core::Param weight;  // d_in x d_out
  core::Param bias;    // 1 x d_out
  std::optional<std::vector<double>> last_avg_activation;
  std::set<std::size_t> stable_set;

  static MlpLayer create(std::size_t d_in, std::size_t d_out, std::size_t index, core::Rng& rng);

  std::size_t in_dim() const { return weight.value.rows(); }
  std::size_t out_dim() const { return weight.value.cols(); }
};

struct FreezeMasks {
  core::Tensor2 weight;
  core::Tensor2 bias;
};

/// How the stability threshold is chosen: an absolute value, or a percentile
/// (0..100) of the per-neuron activation shifts of the layer.
struct EpsilonRule {
  std::optional<double> absolute;
  double percentile = 30.0;
};

/// Mean over samples of each neuron's activation, where each sample's
/// activation matrix (n x d_out) is first averaged over its n time steps.
std::vector<double> average_activations(std::span<const core::Tensor2> activations);

/// Neurons whose mean activation moved by at most eps.
std::set<std::size_t> stable_neuron_set(std::span<const double> curr, std::span<const double> prev,
                                        double eps);

/// Resolves the threshold for a pair of activation profiles.
double resolve_epsilon(std::span<const double> curr, std::span<const double> prev,
                       const EpsilonRule& rule);

/// Linear-interpolated percentile (0..100) of `values`.
double percentile(std::vector<double> values, double q);

/// Ones everywhere except zero columns/bias entries for stable neurons.
FreezeMasks build_freeze_masks(const MlpLayer& layer);

/// Writes the masks of `layer` into the grad masks of its params.
void install_freeze_masks(MlpLayer& layer);

/// Task-boundary update at the start of task `task_index` (1-based), given the
/// layer's mean activations on that task's data. Task 1 only records the
/// activations. Later tasks add newly stable neurons, rebuild and install the
/// masks, then record `curr`. Returns the number of newly stable neurons.
std::size_t selective_retrain_hook(MlpLayer& layer, std::span<const double> curr,
                                   std::size_t task_index, const EpsilonRule& rule);

}  // namespace wecar::model
