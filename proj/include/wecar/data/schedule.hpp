#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "wecar/core/errors.hpp"

namespace wecar::data {

enum class Regime { Short, Long, Explicit };

Regime parse_regime(const std::string& s);
std::string to_string(Regime r);

class ScheduleError : public Error {
 public:
  using Error::Error;
};

/// Ordered partition of class ids into incremental tasks.
struct TaskSchedule {
  std::vector<std::vector<std::size_t>> tasks;

  std::size_t num_tasks() const { return tasks.size(); }
  std::vector<std::size_t> sizes() const;
  std::size_t num_classes() const;
};

/// Default per-task increment: the smallest divisor s >= 2 of `classes` that
/// gives at most 9 equal tasks (16 -> 2, 27 -> 3, 48 -> 6).
std::size_t default_increment(std::size_t classes);

/// Short: a first task holding the largest multiple of the increment not above
/// ceil(C/2), then increment-sized tasks. Long: increment-sized tasks.
/// Classes are assigned in id order. `increment` overrides the default.
TaskSchedule make_schedule(std::size_t classes, Regime regime,
                           std::optional<std::size_t> increment = std::nullopt);

/// Validates an explicit partition of 0..classes-1.
TaskSchedule make_schedule(std::size_t classes, std::vector<std::vector<std::size_t>> tasks);

}  // namespace wecar::data
