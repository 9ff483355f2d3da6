#include "wecar/train/report.hpp"

#include <fstream>
#include <sstream>

#include "wecar/core/errors.hpp"

namespace wecar::train {

using nlohmann::ordered_json;

namespace {

ordered_json arm_json(const ArmResult& a) {
  ordered_json j;
  j["alpha"] = a.alpha;
  j["incremental_accuracy"] = a.incremental;
  j["average_accuracy"] = a.average;
  j["forgetting"] = a.forgetting ? ordered_json(*a.forgetting) : ordered_json(nullptr);
  j["parameters"] = a.parameters;
  return j;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed for " + path.string());
}

}  // namespace

ordered_json report_json(const SessionResult& r, const TrainConfig& cfg,
                         const std::string& regime) {
  ordered_json j;
  j["schedule"] = {{"regime", regime},
                   {"sizes", r.schedule.sizes()},
                   {"tasks", r.schedule.tasks}};
  j["config"] = config_to_json(cfg);
  j["fsm"] = arm_json(r.fsm);
  if (r.lwm) j["lwm"] = arm_json(*r.lwm);
  if (r.naive) j["naive"] = arm_json(*r.naive);
  return j;
}

std::string alpha_csv(const SessionResult& r) {
  const std::size_t n = r.schedule.num_tasks();
  std::ostringstream os;
  os << "model,after_task";
  for (std::size_t j = 1; j <= n; ++j) os << ",task_" << j;
  os << '\n';
  auto rows = [&](const char* name, const ArmResult& a) {
    for (std::size_t m = 0; m < a.alpha.size(); ++m) {
      os << name << ',' << (m + 1);
      for (std::size_t j = 0; j < n; ++j) {
        os << ',';
        if (j < a.alpha[m].size()) os << ordered_json(a.alpha[m][j]).dump();
      }
      os << '\n';
    }
  };
  rows("fsm", r.fsm);
  if (r.lwm) rows("lwm", *r.lwm);
  if (r.naive) rows("naive", *r.naive);
  return os.str();
}

ordered_json timing_json(const SessionResult& r) {
  ordered_json j = ordered_json::array();
  for (const auto& t : r.timings) {
    j.push_back({{"task", t.task}, {"stage", t.stage}, {"seconds", t.seconds}});
  }
  return j;
}

void write_reports(const std::filesystem::path& dir, const SessionResult& r,
                   const TrainConfig& cfg, const std::string& regime) {
  std::filesystem::create_directories(dir);
  write_text(dir / "report.json", report_json(r, cfg, regime).dump(2) + "\n");
  write_text(dir / "alpha.csv", alpha_csv(r));
  write_text(dir / "timing.json", timing_json(r).dump(2) + "\n");
}

}  // namespace wecar::train
