#pragma once

#include <cstddef>
#include <initializer_list>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace wecar::core {

using Rng = std::mt19937_64;

/// Dense row-major matrix. Values are held in double precision while they
/// flow through a computation; parameters keep float32-representable values.
class Tensor2 {
 public:
  Tensor2() = default;
  Tensor2(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Tensor2(std::size_t rows, std::size_t cols, std::vector<double> data);
  Tensor2(std::initializer_list<std::initializer_list<double>> rows);

  static Tensor2 identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const double& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  const double& operator[](std::size_t i) const { return data_[i]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Tensor2& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  std::string shape_str() const;

  void fill(double v);
  bool all_finite() const;

  friend bool operator==(const Tensor2& a, const Tensor2& b) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Rounds every entry to the nearest float32 value.
void round_to_f32(Tensor2& t);

/// Fills with N(0, stddev) draws, rounded to float32.
Tensor2 random_normal(std::size_t rows, std::size_t cols, double stddev, Rng& rng);

/// Glorot-uniform initialization for a fan_in x fan_out weight.
Tensor2 glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);

/// A trainable tensor with its gradient and optional {0,1} gradient mask.
struct Param {
  std::string name;
  Tensor2 value;
  Tensor2 grad;
  bool trainable = true;
  bool has_grad = false;
  std::optional<Tensor2> grad_mask;

  Param() = default;
  Param(std::string n, Tensor2 v, bool train = true);

  void zero_grad();
  void set_mask(Tensor2 mask);
  std::size_t count() const { return value.size(); }
};

}  // namespace wecar::core
