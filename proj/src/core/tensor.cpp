#include "wecar/core/tensor.hpp"

#include <cmath>
#include <sstream>

#include "wecar/core/errors.hpp"

namespace wecar::core {

Tensor2::Tensor2(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw DimensionError("Tensor2: data length " + std::to_string(data_.size()) +
                         " does not match " + std::to_string(rows_) + "x" +
                         std::to_string(cols_));
  }
}

Tensor2::Tensor2(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw DimensionError("Tensor2: ragged initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Tensor2 Tensor2::identity(std::size_t n) {
  Tensor2 t(n, n);
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

std::string Tensor2::shape_str() const {
  std::ostringstream os;
  os << rows_ << "x" << cols_;
  return os.str();
}

void Tensor2::fill(double v) {
  for (auto& x : data_) x = v;
}

bool Tensor2::all_finite() const {
  for (double x : data_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

void round_to_f32(Tensor2& t) {
  for (auto& x : t.data()) x = static_cast<double>(static_cast<float>(x));
}

Tensor2 random_normal(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor2 t(rows, cols);
  for (auto& x : t.data()) x = dist(rng);
  round_to_f32(t);
  return t;
}

Tensor2 glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor2 t(fan_in, fan_out);
  for (auto& x : t.data()) x = dist(rng);
  round_to_f32(t);
  return t;
}

Param::Param(std::string n, Tensor2 v, bool train)
    : name(std::move(n)), value(std::move(v)), trainable(train) {
  round_to_f32(value);
  grad = Tensor2(value.rows(), value.cols());
}

void Param::zero_grad() {
  if (!grad.same_shape(value)) grad = Tensor2(value.rows(), value.cols());
  grad.fill(0.0);
  has_grad = false;
}

void Param::set_mask(Tensor2 mask) {
  if (!mask.same_shape(value)) {
    throw DimensionError("Param " + name + ": mask " + mask.shape_str() +
                         " does not match value " + value.shape_str());
  }
  for (double m : mask.data()) {
    if (m != 0.0 && m != 1.0) throw ConfigError("Param " + name + ": mask entries must be 0 or 1");
  }
  grad_mask = std::move(mask);
}

}  // namespace wecar::core
