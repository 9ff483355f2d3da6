// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <sys/wait.h>

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fuzz.hpp"
#include "gradcheck.hpp"
#include "wecar/data/csi.hpp"
#include "wecar/data/synth.hpp"
#include "wecar/edge/bundle.hpp"
#include "wecar/edge/simulate.hpp"
#include "wecar/train/metrics.hpp"
#include "wecar/train/report.hpp"
#include "wecar/train/trainer.hpp"

namespace fs = std::filesystem;
using namespace wecar;
using json = nlohmann::ordered_json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(prec);
  os << v;
  return os.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool same_bytes(const core::Tensor2& a, const core::Tensor2& b) {
  return a.same_shape(b) &&
         std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }

// ---------------------------------------------------------------- 1

Outcome gradients() {
  const auto t0 = Clock::now();
  std::size_t checks = 0, bad = 0;
  double worst = 0.0;
  std::string worst_case;
  for (const auto& c : testing::gradient_cases()) {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      const auto r = c.run(seed);
      ++checks;
      if (!r.ok()) ++bad;
      if (r.max_rel_err >= worst) {
        worst = r.max_rel_err;
        worst_case = c.name + " seed " + std::to_string(seed) + " " + r.worst;
      }
    }
  }
  const double secs = seconds_since(t0);
  return {bad == 0 && secs < 60.0,
          std::to_string(testing::gradient_cases().size()) + " cases x 20 seeds, " + std::to_string(bad) +
              " failing, max rel err " + fmt(worst, 8) + " (" + worst_case + "), " + fmt(secs, 1) + " s"};
}

// ---------------------------------------------------------------- 2

Outcome isolation() {
  const auto t0 = Clock::now();
  train::TrainConfig cfg;  // n=16, d=12, h=4
  cfg.seed = 11;
  auto ds = data::synthesize({.classes = 6, .per_class = 30, .seed = 11});
  const auto sched = data::make_schedule(6, data::Regime::Long, 2);
  const auto tasks = train::split_tasks(ds, sched, cfg.test_fraction, cfg.seed);

  train::ContinualSession s(cfg);
  std::size_t violations = 0, compared = 0, stable_total = 0;
  std::string first;
  auto flag = [&](const std::string& what) {
    if (violations++ == 0) first = what;
  };

  for (std::size_t t = 0; t < tasks.size(); ++t) {
    std::map<std::string, core::Tensor2> before;
    for (const auto* p : s.fsm().parameters()) before[p->name] = p->value;
    const std::size_t blocks_before = s.fsm().prefixes.size();
    s.learn_task(tasks[t].classes, tasks[t].train);
    if (t == 0) continue;

    const auto& m = s.fsm();
    for (const auto* p : m.parameters()) {
      auto it = before.find(p->name);
      if (it == before.end()) continue;
      const bool frozen_block = starts_with(p->name, "prefix.") && [&] {
        const auto id = std::stoul(p->name.substr(7));
        return id <= blocks_before;
      }();
      if (starts_with(p->name, "attention.") || starts_with(p->name, "encoding.") || frozen_block) {
        ++compared;
        if (!same_bytes(p->value, it->second)) flag(p->name + " changed in task " + std::to_string(t + 1));
      }
    }
    // Stable neurons as of the start of this task: the set after training
    // includes neurons added by this task's hook, all frozen for the task.
    for (const auto& layer : m.mlp) {
      const auto& w0 = before.at(layer.weight.name);
      const auto& b0 = before.at(layer.bias.name);
      for (auto j : layer.stable_set) {
        ++compared;
        for (std::size_t r = 0; r < layer.in_dim(); ++r) {
          if (std::memcmp(&layer.weight.value(r, j), &w0(r, j), sizeof(double)) != 0) {
            flag(layer.weight.name + " column " + std::to_string(j) + " changed in task " + std::to_string(t + 1));
          }
        }
        if (std::memcmp(&layer.bias.value(0, j), &b0(0, j), sizeof(double)) != 0) {
          flag(layer.bias.name + " entry " + std::to_string(j) + " changed");
        }
      }
      if (t + 1 == tasks.size()) stable_total += layer.stable_set.size();
    }
  }
  const double secs = seconds_since(t0);
  std::string detail = std::to_string(compared) + " frozen tensors/columns compared, " +
                       std::to_string(violations) + " changed, " + std::to_string(stable_total) +
                       " stable neurons, " + fmt(secs, 1) + " s";
  if (!first.empty()) detail += "; first: " + first;
  return {violations == 0 && stable_total > 0 && compared > 0 && secs < 300.0, detail};
}

// ---------------------------------------------------------------- 3, 4, 5

struct SeedRuns {
  std::uint64_t seed = 0;
  train::SessionResult adapter;  // with naive and light arms
  double zero_average = 0.0;
  double random_average = 0.0;
};

train::TrainConfig experiment_config(std::uint64_t seed) {
  train::TrainConfig cfg;
  cfg.seed = seed;
  return cfg;
}

std::vector<SeedRuns> run_experiments() {
  std::vector<SeedRuns> out;
  const auto sched = data::make_schedule(6, data::Regime::Long, 2);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto ds = data::synthesize({.classes = 6, .per_class = 30, .snr_db = 10.0, .seed = seed});
    SeedRuns r;
    r.seed = seed;
    r.adapter = train::run_session(ds, sched, experiment_config(seed), {.run_naive = true});
    for (auto mode : {train::PrefixInit::Zero, train::PrefixInit::Random}) {
      auto cfg = experiment_config(seed);
      cfg.prefix_init = mode;
      cfg.distill_enabled = false;
      const double a = train::run_session(ds, sched, cfg).fsm.average;
      (mode == train::PrefixInit::Zero ? r.zero_average : r.random_average) = a;
    }
    out.push_back(std::move(r));
  }
  return out;
}

struct Summary {
  double fsm_forgetting = 0, naive_forgetting = 0;
  double fsm_task1 = 0, naive_task1 = 0;
  double fsm_average = 0, lwm_average = 0;
  double adapter_average = 0, zero_average = 0, random_average = 0;
  std::size_t fsm_params = 0, lwm_params = 0;
};

Summary summarize(const std::vector<SeedRuns>& runs) {
  Summary s;
  const double k = static_cast<double>(runs.size());
  for (const auto& r : runs) {
    const auto& a = r.adapter;
    s.fsm_forgetting += *a.fsm.forgetting / k;
    s.naive_forgetting += *a.naive->forgetting / k;
    s.fsm_task1 += a.fsm.alpha.back().front() / k;
    s.naive_task1 += a.naive->alpha.back().front() / k;
    s.fsm_average += a.fsm.average / k;
    s.lwm_average += a.lwm->average / k;
    s.adapter_average += a.fsm.average / k;
    s.zero_average += r.zero_average / k;
    s.random_average += r.random_average / k;
    s.fsm_params = a.fsm.parameters;
    s.lwm_params = a.lwm->parameters;
  }
  return s;
}

json summary_json(const Summary& s) {
  json j;
  j["fsm_forgetting"] = s.fsm_forgetting;
  j["naive_forgetting"] = s.naive_forgetting;
  j["fsm_task1_after_last"] = s.fsm_task1;
  j["naive_task1_after_last"] = s.naive_task1;
  j["fsm_average"] = s.fsm_average;
  j["lwm_average"] = s.lwm_average;
  j["prefix_adapter_average"] = s.adapter_average;
  j["prefix_zero_average"] = s.zero_average;
  j["prefix_random_average"] = s.random_average;
  j["fsm_parameters"] = s.fsm_params;
  j["lwm_parameters"] = s.lwm_params;
  return j;
}

/// Committed expectations; recorded values must be reproduced within this.
constexpr double kPilotTolerance = 0.02;

Outcome forgetting_benefit(const Summary& s, const fs::path& pilot_path) {
  const double df = s.naive_forgetting - s.fsm_forgetting;
  const double dt = s.fsm_task1 - s.naive_task1;
  std::string detail = "F naive " + fmt(s.naive_forgetting) + " vs full " + fmt(s.fsm_forgetting) +
                       " (diff " + fmt(df) + "), task-1 after last " + fmt(s.fsm_task1) + " vs naive " +
                       fmt(s.naive_task1) + " (diff " + fmt(dt) + ")";
  bool pilot_ok = false;
  if (fs::exists(pilot_path)) {
    const auto pilot = nlohmann::json::parse(slurp(pilot_path));
    pilot_ok = true;
    for (const char* key : {"fsm_forgetting", "naive_forgetting", "fsm_task1_after_last", "naive_task1_after_last"}) {
      const double expected = pilot.at("summary").at(key).get<double>();
      const double got = summary_json(s).at(key).get<double>();
      if (std::abs(expected - got) > kPilotTolerance) {
        pilot_ok = false;
        detail += "; pilot " + std::string(key) + " " + fmt(expected) + " vs " + fmt(got);
      }
    }
    if (pilot_ok) detail += "; matches pilot";
  } else {
    detail += "; pilot file missing";
  }
  return {df >= 0.15 && dt >= 0.30 && pilot_ok, detail};
}

Outcome distillation(const Summary& s) {
  const double gap = s.fsm_average - s.lwm_average;
  const double ratio = static_cast<double>(s.lwm_params) / static_cast<double>(s.fsm_params);
  return {gap <= 0.08 && ratio <= 0.45,
          "mean A full " + fmt(s.fsm_average) + " light " + fmt(s.lwm_average) + " (gap " + fmt(gap) +
              "), parameters " + std::to_string(s.lwm_params) + "/" + std::to_string(s.fsm_params) + " = " +
              fmt(ratio, 3)};
}

Outcome prefix_ablation(const Summary& s, const std::vector<SeedRuns>& runs, const fs::path& out) {
  json report;
  report["seeds"] = json::array();
  for (const auto& r : runs) {
    report["seeds"].push_back({{"seed", r.seed},
                               {"adapter", r.adapter.fsm.average},
                               {"zero", r.zero_average},
                               {"random", r.random_average}});
  }
  report["mean"] = {{"adapter", s.adapter_average}, {"zero", s.zero_average}, {"random", s.random_average}};
  fs::create_directories(out);
  std::ofstream(out / "prefix_ablation.json") << report.dump(2) << "\n";
  const bool ok = s.adapter_average >= s.zero_average - 0.01 && s.adapter_average >= s.random_average - 0.01;
  return {ok, "mean A adapter " + fmt(s.adapter_average) + ", zero " + fmt(s.zero_average) + ", random " +
                  fmt(s.random_average) + "; report " + (out / "prefix_ablation.json").string()};
}

// ---------------------------------------------------------------- 6

Outcome metrics() {
  struct Case {
    train::AlphaMatrix alpha;
    std::vector<double> incremental;
    double average;
    double forgetting;
  };
  // Hand-evaluated: F = mean over earlier tasks of (prior peak - final).
  const std::vector<Case> cases = {
      {{{0.9}, {0.7, 0.8}, {0.6, 0.8, 0.95}}, {1.0, 0.75, 0.5}, 0.75, 0.15},
      {{{1.0}, {0.5, 1.0}}, {1.0, 0.5}, 0.75, 0.5},
      {{{0.5}, {0.75, 1.0}, {0.25, 0.5, 1.0}, {0.5, 0.25, 0.5, 1.0}}, {0.5, 0.25, 0.5, 0.25}, 0.375,
       0.5},
  };
  std::size_t ok = 0;
  std::string detail;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto& c = cases[i];
    const double a = train::average_accuracy(c.incremental);
    const auto f = train::forgetting(c.alpha);
    const bool good = a == c.average && f && std::abs(*f - c.forgetting) <= 1e-15;
    if (good) ++ok;
    detail += (i ? ", " : "") + std::string("case ") + std::to_string(i + 1) + " A " + fmt(a) + " F " +
              (f ? fmt(*f) : "none");
  }
  return {ok == cases.size(), detail};
}

// ---------------------------------------------------------------- 7

Outcome interpolation() {
  core::Rng rng(17);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  std::size_t affine_bad = 0, idem_bad = 0, trials = 200;
  for (std::size_t k = 0; k < trials; ++k) {
    const std::size_t n = 4 + rng() % 12, d = 1 + rng() % 6;
    // Small dyadic coefficients keep every interpolated value exact.
    std::vector<double> a(d), b(d);
    for (std::size_t i = 0; i < d; ++i) {
      a[i] = std::ldexp(static_cast<double>(static_cast<int>(rng() % 17) - 8), -2);
      b[i] = std::ldexp(static_cast<double>(static_cast<int>(rng() % 33) - 16), -3);
    }
    data::CsiMatrix m(n, d);
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t i = 0; i < d; ++i) m.set(t, i, a[i] + b[i] * static_cast<double>(t));
    data::CsiMatrix holes = m;
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t t = 1; t + 1 < n; ++t)
        if (rng() % 3 == 0) holes.set_missing(t, i);
    const auto filled = data::interpolate_missing(holes);
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t i = 0; i < d; ++i)
        if (filled.at(t, i) != m.at(t, i) || filled.is_missing(t, i)) {
          ++affine_bad;
          t = n;
          break;
        }
    if (!(data::interpolate_missing(filled) == filled)) ++idem_bad;
  }

  // Boundary rule: leading and trailing gaps copy the nearest valid value.
  data::CsiMatrix edge(6, 1);
  const double vals[] = {0, 0, 3.5, 4.0, 0, 0};
  for (std::size_t t = 0; t < 6; ++t) edge.set(t, 0, vals[t]);
  edge.set_missing(0, 0);
  edge.set_missing(1, 0);
  edge.set_missing(4, 0);
  edge.set_missing(5, 0);
  const auto be = data::interpolate_missing(edge);
  const bool boundary_ok =
      be.at(0, 0) == 3.5 && be.at(1, 0) == 3.5 && be.at(4, 0) == 4.0 && be.at(5, 0) == 4.0;

  return {affine_bad == 0 && idem_bad == 0 && boundary_ok,
          std::to_string(trials) + " affine trials, " + std::to_string(affine_bad) + " inexact, " +
              std::to_string(idem_bad) + " not idempotent, boundary " + (boundary_ok ? "ok" : "wrong")};
}

// ---------------------------------------------------------------- 8

Outcome protocol() {
  const auto t0 = Clock::now();
  const auto model = testing::sample_model(3);
  const auto frames = testing::fuzz_frames(101, 10000, model);
  const auto bundles = testing::fuzz_bundles(202, 10000, model);

  const auto bytes = edge::serialize(model);
  const bool round_trip = edge::serialize(edge::deserialize(bytes)) == bytes;

  auto ds = data::synthesize({.classes = 4, .per_class = 10, .n = 8, .d = 6, .missing_rate = 0.05, .seed = 5});
  const auto sched = data::make_schedule(4, data::Regime::Long, 2);
  auto cfg = testing::fuzz_config();
  cfg.model.n = 8;
  cfg.model.d = 6;
  cfg.epochs = cfg.distill.epochs = 5;
  edge::SimulationOptions o;
  o.fidelity_inputs = 100;
  const auto inproc = edge::simulate(ds, sched, cfg, o);
  o.mode = edge::SimMode::Tcp;
  const auto tcp = edge::simulate(ds, sched, cfg, o);
  const bool sim_ok = tcp.fidelity_ok() && inproc.fidelity_ok() && tcp.fidelity_inputs == 100 * sched.num_tasks() &&
                      tcp.final_bundle_crc == inproc.final_bundle_crc &&
                      tcp.to_json().dump() == inproc.to_json().dump();

  const double secs = seconds_since(t0);
  std::string detail = std::to_string(frames.cases) + " frame cases (" + std::to_string(frames.frames_handled) + " frames handled, " + std::to_string(frames.failures) +
                       " failures), " + std::to_string(bundles.cases) + " bundle cases (" +
                       std::to_string(bundles.bundles_accepted) + " accepted, " +
                       std::to_string(bundles.failures) + " failures), round trip " +
                       (round_trip ? "ok" : "broken") + ", tcp argmax " + std::to_string(tcp.argmax_agree) +
                       "/" + std::to_string(tcp.fidelity_inputs) + " max logit diff " +
                       fmt(tcp.max_logit_diff, 8) + ", tcp/in-process " + (sim_ok ? "identical" : "differ") +
                       ", " + fmt(secs, 1) + " s";
  if (!frames.ok()) detail += "; " + frames.first_failure;
  if (!bundles.ok()) detail += "; " + bundles.first_failure;
  return {frames.ok() && bundles.ok() && round_trip && sim_ok && secs < 120.0, detail};
}

// ---------------------------------------------------------------- 9

Outcome determinism(const fs::path& out) {
  const fs::path a = out / "determinism_a", b = out / "determinism_b";
  int codes[2];
  int k = 0;
  for (const auto& dir : {a, b}) {
    fs::remove_all(dir);
    const std::string cmd = std::string(WECAR_CLI_PATH) +
                            " train --synth --classes 6 --tasks 3 --seed 9 --epochs 10 --naive --out " +
                            dir.string() + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    codes[k++] = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }
  if (codes[0] != 0 || codes[1] != 0) {
    return {false, "train exited with " + std::to_string(codes[0]) + " and " + std::to_string(codes[1])};
  }
  bool same = true;
  std::string detail;
  for (const char* f : {"report.json", "alpha.csv", "fsm_task3.wecb", "lwm_task3.wecb"}) {
    const auto x = slurp(a / f), y = slurp(b / f);
    const bool eq = !x.empty() && x == y;
    same = same && eq;
    detail += std::string(detail.empty() ? "" : ", ") + f + (eq ? " identical" : " differs");
  }
  return {same, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::string out = "acceptance_out";
  std::string write_pilot;
  std::vector<int> only;
  app.add_option("--out", out, "Directory for generated reports");
  app.add_option("--write-pilot", write_pilot, "Record the experiment summary to this file and exit");
  app.add_option("--only", only, "Run only these criteria");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(out);

  auto wanted = [&](int k) { return only.empty() || std::find(only.begin(), only.end(), k) != only.end(); };

  if (!write_pilot.empty()) {
    const auto runs = run_experiments();
    json j;
    j["description"] = "5 seeds, 6 classes, 3 tasks of 2, SNR 10 dB, default configuration";
    j["summary"] = summary_json(summarize(runs));
    std::ofstream(write_pilot) << j.dump(2) << "\n";
    std::cout << j.dump(2) << "\n";
    return 0;
  }

  std::vector<std::pair<int, std::function<Outcome()>>> checks;
  std::optional<std::vector<SeedRuns>> runs;
  std::optional<Summary> summary;
  auto experiments = [&]() -> const Summary& {
    if (!summary) {
      runs = run_experiments();
      summary = summarize(*runs);
      std::ofstream(fs::path(out) / "experiments.json") << summary_json(*summary).dump(2) << "\n";
    }
    return *summary;
  };

  checks.emplace_back(1, gradients);
  checks.emplace_back(2, isolation);
  checks.emplace_back(3, [&] { return forgetting_benefit(experiments(), WECAR_PILOT_PATH); });
  checks.emplace_back(4, [&] { return distillation(experiments()); });
  checks.emplace_back(5, [&] { return prefix_ablation(experiments(), *runs, out); });
  checks.emplace_back(6, metrics);
  checks.emplace_back(7, interpolation);
  checks.emplace_back(8, protocol);
  checks.emplace_back(9, [&] { return determinism(out); });

  static const char* names[] = {"",
                                "gradient correctness",
                                "anti-forgetting isolation",
                                "continual-learning benefit",
                                "distillation fidelity",
                                "prefix-init ablation",
                                "metrics oracle",
                                "interpolation",
                                "serialization and protocol",
                                "determinism"};
  int failed = 0;
  for (auto& [k, fn] : checks) {
    if (!wanted(k)) continue;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << k << " (" << names[k] << "): " << o.detail
              << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
