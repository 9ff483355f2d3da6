#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "wecar/core/errors.hpp"
#include "wecar/core/tensor.hpp"

namespace wecar::data {

/// Magnitude of a complex CSI value a + bi.
double amplitude(double re, double im);

/// Amplitude matrix of one activity sample: n time steps by d channels
/// (antenna pairs times subcarriers). Cells may be flagged missing when a
/// frame was not received.
class CsiMatrix {
 public:
  CsiMatrix() = default;
  CsiMatrix(std::size_t n, std::size_t d);
  explicit CsiMatrix(core::Tensor2 values);

  std::size_t n() const { return values_.rows(); }
  std::size_t d() const { return values_.cols(); }

  double at(std::size_t t, std::size_t i) const { return values_(t, i); }
  void set(std::size_t t, std::size_t i, double v);
  void set_missing(std::size_t t, std::size_t i);
  bool is_missing(std::size_t t, std::size_t i) const { return missing_[t * d() + i] != 0; }
  std::size_t missing_count() const;

  const core::Tensor2& values() const { return values_; }

  friend bool operator==(const CsiMatrix&, const CsiMatrix&) = default;

 private:
  core::Tensor2 values_;
  std::vector<std::uint8_t> missing_;
};

/// Builds an amplitude matrix from interleaved (re, im) pairs, row-major.
CsiMatrix from_complex(std::size_t n, std::size_t d, const std::vector<double>& interleaved);

/// A subcarrier column with no valid entry at all.
class UnrecoverableColumnError : public Error {
 public:
  UnrecoverableColumnError(std::size_t column);
  std::size_t column() const { return column_; }

 private:
  std::size_t column_;
};

/// Fills missing cells column by column by linear interpolation between the
/// nearest valid time points on either side. Gaps before the first or after
/// the last valid point take the nearest valid value.
CsiMatrix interpolate_missing(const CsiMatrix& m);

}  // namespace wecar::data
