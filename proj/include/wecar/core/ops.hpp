#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "wecar/core/tape.hpp"

namespace wecar::core {

// Differentiable ops. All throw DimensionError naming the op and the operand
// shapes when inputs do not conform.

Var matmul(Var a, Var b);
Var transpose(Var a);
Var softmax_rows(Var a);
Var tanh(Var a);
Var relu(Var a);
Var add(Var a, Var b);
/// a (m x n) + bias (1 x n) broadcast over rows.
Var add_bias(Var a, Var bias);
Var scale(Var a, double s);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice_rows(Var a, std::size_t begin, std::size_t count);
Var mean_rows(Var a);
Var sum_all(Var a);
/// Mean squared error over all entries, 1 x 1.
Var mse(Var a, Var b);
/// Mean cross-entropy of row-wise softmax over columns [class_begin, cols).
/// `labels` index full logit columns and must fall in that range.
Var softmax_cross_entropy(Var logits, std::span<const std::size_t> labels,
                          std::size_t class_begin = 0);
/// Inverted dropout; identity when rate == 0.
Var dropout(Var a, double rate, Rng& rng);

/// Gaussian range log-weights: out(i, j) = -(pos_i - mu_j)^2 / (2 sigma_j^2) - log sigma_j
/// for positions pos_i = i + 1, with sigma_j = softplus(sigma_raw_j) + sigma_floor.
Var gaussian_range_logits(Var mu, Var sigma_raw, std::size_t n, double sigma_floor);

// Plain (non-recorded) helpers shared by ops and callers.
Tensor2 matmul(const Tensor2& a, const Tensor2& b);
Tensor2 transpose(const Tensor2& a);
Tensor2 softmax_rows(const Tensor2& a);
double softplus(double x);
double softplus_inverse(double y);

}  // namespace wecar::core
