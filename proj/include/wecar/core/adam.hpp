#pragma once

#include <cstdint>
#include <span>
#include <unordered_map>

#include "wecar/core/tensor.hpp"

namespace wecar::core {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with per-entry gradient masks. Entries whose mask is 0 are skipped
/// entirely (value and moments untouched), so a masked entry stays
/// bit-identical regardless of any momentum accumulated before masking.
class Adam {
 public:
  explicit Adam(AdamOptions opts = {}) : opts_(opts) {}

  /// Applies one update to every trainable param, then clears their grads.
  /// Throws StateError if a trainable param has no populated gradient.
  void step(std::span<Param* const> params);

  std::int64_t steps() const { return step_; }
  const AdamOptions& options() const { return opts_; }

 private:
  struct Moments {
    Tensor2 m;
    Tensor2 v;
  };

  AdamOptions opts_;
  std::int64_t step_ = 0;
  std::unordered_map<const Param*, Moments> state_;
};

}  // namespace wecar::core
