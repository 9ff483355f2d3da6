#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace wecar::train {

/// Lower-triangular accuracy matrix: alpha[m][j] is the accuracy on task j's
/// test data after training task m (0-based), for j <= m.
using AlphaMatrix = std::vector<std::vector<double>>;

/// Mean of the incremental accuracies A_1..A_N.
double average_accuracy(std::span<const double> incremental);

/// Mean over j < N of max_{m < N} alpha[m][j] - alpha[N][j], with N the last
/// task. Absent for fewer than two tasks.
std::optional<double> forgetting(const AlphaMatrix& alpha);

/// Per-task forgetting values f_j for j < N (empty for fewer than two tasks).
std::vector<double> forgetting_per_task(const AlphaMatrix& alpha);

/// Correct/total counts of one task's test set under one model.
struct EvalCount {
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy() const;
};

/// A_t: accuracy over the union of the test samples of tasks 1..t.
double union_accuracy(std::span<const EvalCount> tasks_up_to_t);

}  // namespace wecar::train
