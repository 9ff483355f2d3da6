#pragma once

#include <cstddef>
#include <vector>

#include "wecar/core/ops.hpp"
#include "wecar/core/tensor.hpp"

namespace wecar::model {

/// Learnable Gaussian range positional encoding. Each of G ranges has a
/// centre mu_j and width sigma_j over positions 1..n; a position's softmax
/// weights over the ranges mix the rows of the encoding table E (G x d),
/// which is added to the input stream.
struct GaussianRangeEncoding {
  static constexpr double kSigmaFloor = 1e-3;

  core::Param mu;         // 1 x G
  core::Param sigma_raw;  // 1 x G, sigma = softplus(raw) + kSigmaFloor
  core::Param table;      // G x d

  /// Centres at the midpoints of G equal bins over [0, n) (WiAR's n=270,
  /// G=10 gives 13.5, 40.5, ..., 256.5), all widths `sigma`, table ~ N(0, 0.1).
  static GaussianRangeEncoding create(std::size_t n, std::size_t d, std::size_t ranges,
                                      double sigma, core::Rng& rng);

  std::size_t ranges() const { return mu.value.cols(); }
  std::size_t dim() const { return table.value.cols(); }
  std::vector<double> sigma() const;
  void set_sigma(std::size_t j, double sigma);
  void set_trainable(bool trainable);

  /// n x G log-weights B.
  core::Tensor2 compute_b(std::size_t n) const;
  /// n x G row-stochastic weights softmax(B).
  core::Tensor2 compute_beta(std::size_t n) const;
  /// X + softmax(B) E.
  core::Tensor2 encode(const core::Tensor2& x) const;
};

struct EncodingVars {
  core::Var mu;
  core::Var sigma_raw;
  core::Var table;
};

EncodingVars bind(core::Tape& tape, GaussianRangeEncoding& enc);
/// Binds current values as constants (inference, no gradients).
EncodingVars bind_constant(core::Tape& tape, const GaussianRangeEncoding& enc);

/// softmax(B) E for sequences of length n; identical for every sample of a
/// given length, so callers compute it once per tape.
core::Var range_bias(const EncodingVars& vars, std::size_t n);

/// Recorded X + range_bias.
core::Var encode(const EncodingVars& vars, core::Var x);

}  // namespace wecar::model
