#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "wecar/core/tape.hpp"
#include "wecar/core/tensor.hpp"

namespace wecar::testing {

/// Central-difference step used by every gradient check.
inline constexpr double kFdStep = 1e-4;
/// Largest accepted relative error.
inline constexpr double kFdTolerance = 1e-3;
/// Relative errors use max(|analytic|, |numeric|, kFdFloor) as denominator,
/// so gradients below the floor are held to an absolute bound.
inline constexpr double kFdFloor = 1e-3;

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::size_t entries = 0;
  std::string worst;  // param name and entry of the largest error
  bool ok() const { return entries > 0 && max_rel_err < kFdTolerance; }
};

double rel_err(double analytic, double numeric);

/// Builds the scalar loss on a tape; must bind every param in `params` with
/// Tape::param so that gradients reach them.
using LossBuilder = std::function<core::Var(core::Tape&)>;

/// Compares backward() gradients with central differences, entry by entry.
GradCheckResult grad_check(const std::vector<core::Param*>& params, const LossBuilder& loss,
                           double h = kFdStep);

struct GradCase {
  std::string name;
  std::function<GradCheckResult(std::uint64_t seed)> run;
};

/// Every differentiable op plus the composite losses of the model and the
/// distillation stages, each on random inputs drawn from `seed`.
const std::vector<GradCase>& gradient_cases();

/// Uniform(-1, 1) entries with |x| >= margin.
core::Tensor2 random_matrix(std::size_t rows, std::size_t cols, core::Rng& rng,
                            double margin = 0.0);

}  // namespace wecar::testing
