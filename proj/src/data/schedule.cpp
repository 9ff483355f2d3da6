#include "wecar/data/schedule.hpp"

#include <numeric>

namespace wecar::data {

Regime parse_regime(const std::string& s) {
  if (s == "short") return Regime::Short;
  if (s == "long") return Regime::Long;
  if (s == "explicit") return Regime::Explicit;
  throw ConfigError("unknown schedule regime '" + s + "' (expected short|long|explicit)");
}

std::string to_string(Regime r) {
  switch (r) {
    case Regime::Short: return "short";
    case Regime::Long: return "long";
    case Regime::Explicit: return "explicit";
  }
  return "?";
}

std::vector<std::size_t> TaskSchedule::sizes() const {
  std::vector<std::size_t> out;
  for (const auto& t : tasks) out.push_back(t.size());
  return out;
}

std::size_t TaskSchedule::num_classes() const {
  std::size_t c = 0;
  for (const auto& t : tasks) c += t.size();
  return c;
}

std::size_t default_increment(std::size_t classes) {
  for (std::size_t s = 2; s <= classes; ++s) {
    if (classes % s == 0 && classes / s <= 9) return s;
  }
  return classes;
}

namespace {

TaskSchedule from_sizes(const std::vector<std::size_t>& sizes) {
  TaskSchedule sched;
  std::size_t next = 0;
  for (auto sz : sizes) {
    std::vector<std::size_t> task(sz);
    std::iota(task.begin(), task.end(), next);
    next += sz;
    sched.tasks.push_back(std::move(task));
  }
  return sched;
}

}  // namespace

TaskSchedule make_schedule(std::size_t classes, Regime regime,
                           std::optional<std::size_t> increment) {
  if (classes < 2) throw ScheduleError("make_schedule: need at least 2 classes");
  if (regime == Regime::Explicit) {
    throw ScheduleError("make_schedule: explicit regime requires a task list");
  }
  const std::size_t inc = increment.value_or(default_increment(classes));
  if (inc == 0) throw ScheduleError("make_schedule: increment must be >= 1");
  if (classes % inc != 0) {
    throw ScheduleError("make_schedule: " + std::to_string(classes) +
                        " classes do not split into tasks of " + std::to_string(inc) +
                        "; pass an explicit task list");
  }
  if (classes / inc < 2) {
    throw ScheduleError("make_schedule: " + std::to_string(classes) +
                        " classes give a single task at increment " + std::to_string(inc) +
                        "; pass an explicit task list");
  }

  std::vector<std::size_t> sizes;
  if (regime == Regime::Long) {
    sizes.assign(classes / inc, inc);
  } else {
    const std::size_t half = (classes + 1) / 2;
    const std::size_t first = (half / inc) * inc;
    if (first == 0 || first == classes) {
      throw ScheduleError("make_schedule: short regime undefined for " + std::to_string(classes) +
                          " classes at increment " + std::to_string(inc) +
                          "; pass an explicit task list");
    }
    sizes.push_back(first);
    sizes.insert(sizes.end(), (classes - first) / inc, inc);
  }
  return from_sizes(sizes);
}

TaskSchedule make_schedule(std::size_t classes, std::vector<std::vector<std::size_t>> tasks) {
  if (classes < 2) throw ScheduleError("make_schedule: need at least 2 classes");
  if (tasks.empty()) throw ScheduleError("make_schedule: explicit list is empty");
  std::vector<int> owner(classes, -1);
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    if (tasks[t].empty()) {
      throw ScheduleError("make_schedule: task " + std::to_string(t + 1) + " has no classes");
    }
    for (auto c : tasks[t]) {
      if (c >= classes) {
        throw ScheduleError("make_schedule: class " + std::to_string(c) + " out of range");
      }
      if (owner[c] >= 0) {
        throw ScheduleError("make_schedule: class " + std::to_string(c) +
                            " appears in more than one task");
      }
      owner[c] = static_cast<int>(t);
    }
  }
  for (std::size_t c = 0; c < classes; ++c) {
    if (owner[c] < 0) {
      throw ScheduleError("make_schedule: class " + std::to_string(c) + " is not assigned");
    }
  }
  return TaskSchedule{std::move(tasks)};
}

}  // namespace wecar::data
