#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "wecar/train/config.hpp"
#include "wecar/train/trainer.hpp"

namespace wecar::train {

/// Session summary without wall-clock data, so equal seeds give equal bytes.
nlohmann::ordered_json report_json(const SessionResult& r, const TrainConfig& cfg,
                                   const std::string& regime);
/// Rows `model,after_task,task_1..task_N`; cells above the diagonal are empty.
std::string alpha_csv(const SessionResult& r);
nlohmann::ordered_json timing_json(const SessionResult& r);

/// Writes report.json, alpha.csv and timing.json into `dir`.
void write_reports(const std::filesystem::path& dir, const SessionResult& r,
                   const TrainConfig& cfg, const std::string& regime);

}  // namespace wecar::train
