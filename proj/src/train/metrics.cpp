#include "wecar/train/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "wecar/core/errors.hpp"

namespace wecar::train {

double average_accuracy(std::span<const double> incremental) {
  if (incremental.empty()) throw ConfigError("average_accuracy: no tasks");
  return std::accumulate(incremental.begin(), incremental.end(), 0.0) /
         static_cast<double>(incremental.size());
}

namespace {

void check_alpha(const AlphaMatrix& alpha) {
  for (std::size_t m = 0; m < alpha.size(); ++m) {
    if (alpha[m].size() < m + 1) {
      throw DimensionError("alpha row " + std::to_string(m) + " has " +
                           std::to_string(alpha[m].size()) + " entries, expected " +
                           std::to_string(m + 1));
    }
  }
}

}  // namespace

std::vector<double> forgetting_per_task(const AlphaMatrix& alpha) {
  check_alpha(alpha);
  std::vector<double> out;
  if (alpha.size() < 2) return out;
  const std::size_t last = alpha.size() - 1;
  for (std::size_t j = 0; j < last; ++j) {
    double peak = alpha[j][j];
    for (std::size_t m = j; m < last; ++m) peak = std::max(peak, alpha[m][j]);
    out.push_back(peak - alpha[last][j]);
  }
  return out;
}

std::optional<double> forgetting(const AlphaMatrix& alpha) {
  auto f = forgetting_per_task(alpha);
  if (f.empty()) return std::nullopt;
  return std::accumulate(f.begin(), f.end(), 0.0) / static_cast<double>(f.size());
}

double EvalCount::accuracy() const {
  if (total == 0) throw ConfigError("evaluation on an empty test set");
  return static_cast<double>(correct) / static_cast<double>(total);
}

double union_accuracy(std::span<const EvalCount> tasks) {
  EvalCount sum;
  for (const auto& t : tasks) {
    sum.correct += t.correct;
    sum.total += t.total;
  }
  return sum.accuracy();
}

}  // namespace wecar::train
