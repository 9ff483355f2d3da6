#include "wecar/data/csi.hpp"

#include <cmath>
#include <string>

namespace wecar::data {

double amplitude(double re, double im) { return std::sqrt(re * re + im * im); }

CsiMatrix::CsiMatrix(std::size_t n, std::size_t d) : values_(n, d), missing_(n * d, 0) {
  if (n == 0 || d == 0) throw DimensionError("CsiMatrix: n and d must be >= 1");
}

CsiMatrix::CsiMatrix(core::Tensor2 values)
    : values_(std::move(values)), missing_(values_.size(), 0) {
  if (values_.rows() == 0 || values_.cols() == 0) {
    throw DimensionError("CsiMatrix: n and d must be >= 1");
  }
}

void CsiMatrix::set(std::size_t t, std::size_t i, double v) {
  values_(t, i) = v;
  missing_[t * d() + i] = 0;
}

void CsiMatrix::set_missing(std::size_t t, std::size_t i) {
  values_(t, i) = 0.0;
  missing_[t * d() + i] = 1;
}

std::size_t CsiMatrix::missing_count() const {
  std::size_t c = 0;
  for (auto m : missing_) c += m;
  return c;
}

CsiMatrix from_complex(std::size_t n, std::size_t d, const std::vector<double>& interleaved) {
  if (interleaved.size() != 2 * n * d) {
    throw DimensionError("from_complex: expected " + std::to_string(2 * n * d) + " values, got " +
                         std::to_string(interleaved.size()));
  }
  CsiMatrix m(n, d);
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t i = 0; i < d; ++i) {
      const std::size_t k = 2 * (t * d + i);
      m.set(t, i, amplitude(interleaved[k], interleaved[k + 1]));
    }
  return m;
}

UnrecoverableColumnError::UnrecoverableColumnError(std::size_t column)
    : Error("interpolate_missing: subcarrier column " + std::to_string(column) +
            " has no valid entries"),
      column_(column) {}

CsiMatrix interpolate_missing(const CsiMatrix& m) {
  if (m.missing_count() == 0) return m;
  CsiMatrix out = m;
  const std::size_t n = m.n();
  std::vector<std::size_t> valid;
  for (std::size_t i = 0; i < m.d(); ++i) {
    valid.clear();
    for (std::size_t t = 0; t < n; ++t) {
      if (!m.is_missing(t, i)) valid.push_back(t);
    }
    if (valid.empty()) throw UnrecoverableColumnError(i);
    if (valid.size() == n) continue;

    std::size_t next = 0;  // index into `valid` of the first valid point >= t
    for (std::size_t t = 0; t < n; ++t) {
      while (next < valid.size() && valid[next] < t) ++next;
      if (!m.is_missing(t, i)) continue;
      if (next == 0) {
        out.set(t, i, m.at(valid.front(), i));
      } else if (next == valid.size()) {
        out.set(t, i, m.at(valid.back(), i));
      } else {
        const std::size_t t1 = valid[next - 1];
        const std::size_t t2 = valid[next];
        const double d1 = m.at(t1, i);
        const double d2 = m.at(t2, i);
        out.set(t, i,
                d1 + (d2 - d1) * static_cast<double>(t - t1) / static_cast<double>(t2 - t1));
      }
    }
  }
  return out;
}

}  // namespace wecar::data
