#include "wecar/model/stable_mlp.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "wecar/core/errors.hpp"

namespace wecar::model {

MlpLayer MlpLayer::create(std::size_t d_in, std::size_t d_out, std::size_t index,
                          core::Rng& rng) {
  if (d_in == 0 || d_out == 0) throw ConfigError("MlpLayer: dims must be >= 1");
  MlpLayer layer;
  const auto tag = "mlp." + std::to_string(index);
  layer.weight = core::Param(tag + ".weight", core::glorot_uniform(d_in, d_out, rng));
  layer.bias = core::Param(tag + ".bias", core::Tensor2(1, d_out));
  return layer;
}

std::vector<double> average_activations(std::span<const core::Tensor2> activations) {
  if (activations.empty()) throw ConfigError("average_activations: empty dataset");
  const std::size_t width = activations.front().cols();
  std::vector<double> avg(width, 0.0);
  for (const auto& a : activations) {
    if (a.cols() != width || a.rows() == 0) {
      throw DimensionError("average_activations: inconsistent activation shape " + a.shape_str());
    }
    for (std::size_t j = 0; j < width; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < a.rows(); ++t) s += a(t, j);
      avg[j] += s / static_cast<double>(a.rows());
    }
  }
  for (auto& v : avg) v /= static_cast<double>(activations.size());
  return avg;
}

std::set<std::size_t> stable_neuron_set(std::span<const double> curr, std::span<const double> prev,
                                        double eps) {
  if (curr.size() != prev.size()) {
    throw DimensionError("stable_neuron_set: " + std::to_string(curr.size()) + " vs " +
                         std::to_string(prev.size()) + " neurons");
  }
  if (!(eps >= 0.0)) throw ConfigError("stable_neuron_set: eps must be >= 0");
  std::set<std::size_t> out;
  for (std::size_t p = 0; p < curr.size(); ++p) {
    if (std::abs(curr[p] - prev[p]) <= eps) out.insert(p);
  }
  return out;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw ConfigError("percentile: no values");
  if (!(q >= 0.0 && q <= 100.0)) throw ConfigError("percentile: q must be in [0, 100]");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

double resolve_epsilon(std::span<const double> curr, std::span<const double> prev,
                       const EpsilonRule& rule) {
  if (rule.absolute) {
    if (!(*rule.absolute >= 0.0)) throw ConfigError("epsilon must be >= 0");
    return *rule.absolute;
  }
  if (curr.size() != prev.size()) throw DimensionError("resolve_epsilon: length mismatch");
  std::vector<double> shifts(curr.size());
  for (std::size_t p = 0; p < curr.size(); ++p) shifts[p] = std::abs(curr[p] - prev[p]);
  return percentile(std::move(shifts), rule.percentile);
}

FreezeMasks build_freeze_masks(const MlpLayer& layer) {
  FreezeMasks m{core::Tensor2(layer.in_dim(), layer.out_dim(), 1.0),
                core::Tensor2(1, layer.out_dim(), 1.0)};
  for (auto j : layer.stable_set) {
    for (std::size_t i = 0; i < layer.in_dim(); ++i) m.weight(i, j) = 0.0;
    m.bias[j] = 0.0;
  }
  return m;
}

void install_freeze_masks(MlpLayer& layer) {
  auto m = build_freeze_masks(layer);
  layer.weight.set_mask(std::move(m.weight));
  layer.bias.set_mask(std::move(m.bias));
}

std::size_t selective_retrain_hook(MlpLayer& layer, std::span<const double> curr,
                                   std::size_t task_index, const EpsilonRule& rule) {
  if (rule.absolute && !(*rule.absolute >= 0.0)) {
    throw ConfigError("selective_retrain_hook: epsilon must be >= 0");
  }
  if (!rule.absolute && !(rule.percentile >= 0.0 && rule.percentile <= 100.0)) {
    throw ConfigError("selective_retrain_hook: percentile must be in [0, 100]");
  }
  if (curr.size() != layer.out_dim()) {
    throw DimensionError("selective_retrain_hook: " + std::to_string(curr.size()) +
                         " activations for " + std::to_string(layer.out_dim()) + " neurons");
  }
  std::size_t added = 0;
  if (task_index >= 2 && layer.last_avg_activation) {
    const auto& prev = *layer.last_avg_activation;
    const double eps = resolve_epsilon(curr, prev, rule);
    for (auto p : stable_neuron_set(curr, prev, eps)) {
      added += layer.stable_set.insert(p).second ? 1 : 0;
    }
    install_freeze_masks(layer);
  }
  layer.last_avg_activation.emplace(curr.begin(), curr.end());
  return added;
}

}  // namespace wecar::model
