// Operator entry point: synth, preprocess, train, eval, simulate.
// Exit codes: 0 ok, 2 usage or input error, 3 environment error, 4 internal.

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <numeric>
#include <optional>
#include <string>

#include "wecar/data/csi.hpp"
#include "wecar/data/dataset.hpp"
#include "wecar/data/schedule.hpp"
#include "wecar/data/synth.hpp"
#include "wecar/edge/bundle.hpp"
#include "wecar/edge/simulate.hpp"
#include "wecar/edge/transport.hpp"
#include "wecar/train/config.hpp"
#include "wecar/train/report.hpp"
#include "wecar/train/trainer.hpp"

namespace fs = std::filesystem;
using namespace wecar;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 2;
constexpr int kEnvironment = 3;
constexpr int kInternal = 4;

/// Bad user input (paths, values) as opposed to a broken environment.
struct InputError : Error {
  using Error::Error;
};

struct SynthArgs {
  std::size_t classes = 6;
  std::size_t per_class = 30;
  std::size_t n = 16;
  std::size_t d = 12;
  std::string snr = "10";
  double missing_rate = 0.0;

  data::SynthOptions options(std::uint64_t seed) const {
    data::SynthOptions o;
    o.classes = classes;
    o.per_class = per_class;
    o.n = n;
    o.d = d;
    o.missing_rate = missing_rate;
    o.seed = seed;
    if (snr == "inf" || snr == "Inf" || snr == "infinity") {
      o.snr_db = std::numeric_limits<double>::infinity();
    } else {
      try {
        o.snr_db = std::stod(snr);
      } catch (const std::exception&) {
        throw InputError("--snr must be a number or 'inf'");
      }
    }
    return o;
  }
};

void add_synth_flags(CLI::App* app, SynthArgs& a) {
  app->add_option("--classes", a.classes, "Number of classes")->check(CLI::PositiveNumber);
  app->add_option("--per-class", a.per_class, "Samples per class")->check(CLI::PositiveNumber);
  app->add_option("--n", a.n, "Time steps per sample")->check(CLI::PositiveNumber);
  app->add_option("--d", a.d, "Channels per time step")->check(CLI::PositiveNumber);
  app->add_option("--snr", a.snr, "Signal-to-noise ratio in dB, or 'inf'");
  app->add_option("--missing-rate", a.missing_rate, "Fraction of cells left empty")
      ->check(CLI::Range(0.0, 0.99));
}

std::string default_out() {
  const char* env = std::getenv("WECAR_OUTPUT_DIR");
  return env && *env ? env : "wecar_out";
}

data::Dataset load_input(const std::string& path) {
  if (!fs::exists(path)) throw InputError("dataset not found: " + path);
  try {
    return data::load_dataset(path);
  } catch (const data::ParseError& e) {
    throw InputError(path + ": line " + std::to_string(e.line()) + ": " + e.what());
  }
}

struct ScheduleArgs {
  std::string regime = "short";
  std::optional<std::size_t> increment;
  std::optional<std::size_t> tasks;

  data::TaskSchedule build(std::size_t classes) const {
    std::optional<std::size_t> inc = increment;
    if (tasks) {
      if (*tasks == 0 || classes % *tasks != 0) {
        throw InputError("--tasks must divide the class count");
      }
      if (*tasks == 1) {
        std::vector<std::size_t> all(classes);
        std::iota(all.begin(), all.end(), std::size_t{0});
        return data::make_schedule(classes, {all});
      }
      inc = classes / *tasks;
      return data::make_schedule(classes, data::Regime::Long, inc);
    }
    return data::make_schedule(classes, data::parse_regime(regime), inc);
  }
};

void add_schedule_flags(CLI::App* app, ScheduleArgs& a) {
  app->add_option("--regime", a.regime, "Task split: short or long")
      ->check(CLI::IsMember({"short", "long"}));
  app->add_option("--increment", a.increment, "Classes per incremental task");
  app->add_option("--tasks", a.tasks, "Equal-sized tasks (overrides --regime)");
}

struct TrainArgs {
  std::optional<std::string> data;
  bool synth = false;
  SynthArgs synth_args;
  ScheduleArgs schedule;
  std::optional<std::string> config;
  std::uint64_t seed = 7;
  std::string out = default_out();
  std::optional<std::size_t> epochs;
  std::optional<std::string> prefix_init;
  bool naive = false;
  bool no_bundles = false;
};

train::TrainConfig build_config(const std::optional<std::string>& path, std::uint64_t seed,
                                const std::optional<std::size_t>& epochs,
                                const std::optional<std::string>& prefix_init) {
  train::TrainConfig cfg;
  if (path) {
    if (!fs::exists(*path)) throw InputError("config file not found: " + *path);
    cfg = train::load_config(*path);
  }
  cfg.seed = seed;
  if (epochs) {
    cfg.epochs = *epochs;
    cfg.distill.epochs = *epochs;
  }
  if (prefix_init) cfg.prefix_init = train::parse_prefix_init(*prefix_init);
  cfg.validate();
  return cfg;
}

data::Dataset train_input(const std::optional<std::string>& path, bool synth,
                          const SynthArgs& sa, std::uint64_t seed) {
  if (path && synth) throw InputError("use either --data or --synth");
  if (synth) return data::synthesize(sa.options(seed));
  if (!path) throw InputError("a dataset is required: pass --data <file> or --synth");
  return load_input(*path);
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

int cmd_synth(const SynthArgs& a, std::uint64_t seed, const std::string& out) {
  auto ds = data::synthesize(a.options(seed));
  if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
  data::save_dataset(ds, out);
  spdlog::info("wrote {} samples ({} classes, {}x{}) to {}", ds.size(), ds.num_classes, ds.n, ds.d,
               out);
  return kOk;
}

int cmd_preprocess(const std::string& in, const std::string& out) {
  auto ds = load_input(in);
  std::size_t filled = 0;
  for (auto& s : ds.samples) {
    filled += s.matrix.missing_count();
    s.matrix = data::interpolate_missing(s.matrix);
  }
  if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
  data::save_dataset(ds, out);
  spdlog::info("interpolated {} missing cells across {} samples; wrote {}", filled, ds.size(), out);
  return kOk;
}

int cmd_train(const TrainArgs& a) {
  auto ds = train_input(a.data, a.synth, a.synth_args, a.seed);
  auto cfg = build_config(a.config, a.seed, a.epochs, a.prefix_init);
  auto schedule = a.schedule.build(ds.num_classes);
  const std::string regime = a.schedule.tasks ? "long" : a.schedule.regime;
  spdlog::info("schedule {} over {} classes: {} tasks", regime, ds.num_classes,
               schedule.num_tasks());

  const fs::path out(a.out);
  fs::create_directories(out);
  train::SessionOptions opts;
  opts.run_naive = a.naive;
  opts.on_task = [&](std::size_t t, const train::ContinualSession& s) {
    spdlog::info("task {} done", t);
    if (a.no_bundles) return;
    write_bytes(out / ("fsm_task" + std::to_string(t) + ".wecb"), edge::serialize(s.fsm()));
    if (s.lwm()) {
      write_bytes(out / ("lwm_task" + std::to_string(t) + ".wecb"), edge::serialize(*s.lwm()));
    }
  };
  auto result = train::run_session(ds, schedule, cfg, opts);
  cfg.model.n = ds.n;
  cfg.model.d = ds.d;
  train::write_reports(out, result, cfg, regime);
  spdlog::info("FSM average accuracy {:.4f}; reports in {}", result.fsm.average, out.string());
  return kOk;
}

int cmd_eval(const std::string& bundle_path, const std::string& data_path, const std::string& out) {
  if (!fs::exists(bundle_path)) throw InputError("bundle not found: " + bundle_path);
  std::ifstream in(bundle_path, std::ios::binary);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), {});
  model::Model m;
  try {
    m = edge::deserialize(bytes);
  } catch (const edge::BundleError& e) {
    throw InputError(bundle_path + ": " + e.what());
  }
  auto ds = load_input(data_path);
  if (ds.n != m.config.n || ds.d != m.config.d) {
    throw InputError("dataset shape does not match the model");
  }
  auto examples = train::to_examples(ds, m.classifier.class_ids);
  if (examples.empty()) throw InputError("dataset has no samples of the model's classes");
  const auto counts = train::evaluate_counts(m, examples);
  nlohmann::ordered_json j;
  j["bundle"] = fs::path(bundle_path).filename().string();
  j["kind"] = model::to_string(m.kind);
  j["task_index"] = m.task_index;
  j["classes"] = m.classifier.class_ids;
  j["samples"] = counts.total;
  j["correct"] = counts.correct;
  j["accuracy"] = counts.accuracy();
  j["parameters"] = m.parameter_count();
  fs::create_directories(out);
  write_file(fs::path(out) / "eval.json", j.dump(2) + "\n");
  spdlog::info("accuracy {:.4f} on {} samples", counts.accuracy(), counts.total);
  return kOk;
}

struct SimArgs {
  std::optional<std::string> data;
  bool synth = false;
  SynthArgs synth_args;
  ScheduleArgs schedule;
  std::optional<std::string> config;
  std::uint64_t seed = 7;
  std::string out = default_out();
  std::optional<std::size_t> epochs;
  std::string mode = "tcp";
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
  bool fault = false;
};

int cmd_simulate(const SimArgs& a) {
  auto ds = train_input(a.data, a.synth, a.synth_args, a.seed);
  auto cfg = build_config(a.config, a.seed, a.epochs, std::nullopt);
  auto schedule = a.schedule.build(ds.num_classes);
  const fs::path out(a.out);
  fs::create_directories(out);

  edge::SimulationOptions opts;
  opts.mode = a.mode == "tcp" ? edge::SimMode::Tcp : edge::SimMode::InProcess;
  opts.host = a.host;
  opts.port = a.port;
  opts.fault_inject = a.fault;
  opts.edge_log = out / "transcript_edge.log";
  spdlog::info("simulating {} tasks ({} mode)", schedule.num_tasks(), a.mode);
  auto res = edge::simulate(ds, schedule, cfg, opts);

  std::string transcript = "mode " + a.mode + "\n";
  for (const auto& line : res.transcript) transcript += line + "\n";
  write_file(out / "transcript.log", transcript);
  write_file(out / "simulate.json", res.to_json().dump(2) + "\n");
  if (!res.fidelity_ok()) {
    spdlog::error("end predictions diverge from the edge: {}/{} argmax agree, max diff {}",
                  res.argmax_agree, res.fidelity_inputs, res.max_logit_diff);
    return kInternal;
  }
  spdlog::info("{} pushes installed; end accuracy {:.4f}", res.pushes.size(), res.end_accuracy);
  return kOk;
}

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("wecar");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  spdlog::set_level(spdlog::level::info);
  if (const char* lvl = std::getenv("WECAR_LOG_LEVEL"); lvl && *lvl) {
    spdlog::set_level(spdlog::level::from_str(lvl));
  }
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Continual learning engine and edge/end simulator for CSI activity data"};
  app.require_subcommand(1);

  std::uint64_t synth_seed = 7;
  SynthArgs synth_args;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "Write a seeded synthetic dataset");
  add_synth_flags(synth, synth_args);
  synth->add_option("--seed", synth_seed, "Random seed");
  synth->add_option("--out", synth_out, "Output CSV file")->required();

  std::string pre_in, pre_out;
  auto* pre = app.add_subcommand("preprocess", "Fill missing cells by interpolation");
  pre->add_option("--data", pre_in, "Input dataset")->required();
  pre->add_option("--out", pre_out, "Output CSV file")->required();

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Run a continual-learning session");
  train->add_option("--data", ta.data, "Dataset file");
  train->add_flag("--synth", ta.synth, "Use a synthetic dataset");
  add_synth_flags(train, ta.synth_args);
  add_schedule_flags(train, ta.schedule);
  train->add_option("--config", ta.config, "JSON configuration file");
  train->add_option("--seed", ta.seed, "Random seed");
  train->add_option("--out", ta.out, "Output directory (env WECAR_OUTPUT_DIR)");
  train->add_option("--epochs", ta.epochs, "Epochs per stage");
  train->add_option("--prefix-init", ta.prefix_init, "adapter, zero or random")
      ->check(CLI::IsMember({"adapter", "zero", "random"}));
  train->add_flag("--naive", ta.naive, "Also run the plain fine-tuning baseline");
  train->add_flag("--no-bundles", ta.no_bundles, "Skip writing model bundles");

  std::string ev_bundle, ev_data, ev_out = default_out();
  auto* eval = app.add_subcommand("eval", "Evaluate a model bundle on a dataset");
  eval->add_option("--bundle", ev_bundle, "Model bundle (.wecb)")->required();
  eval->add_option("--data", ev_data, "Dataset file")->required();
  eval->add_option("--out", ev_out, "Output directory (env WECAR_OUTPUT_DIR)");

  SimArgs sa;
  auto* sim = app.add_subcommand("simulate", "Run an edge and an end over a schedule");
  sim->add_option("--data", sa.data, "Dataset file");
  sim->add_flag("--synth", sa.synth, "Use a synthetic dataset");
  add_synth_flags(sim, sa.synth_args);
  add_schedule_flags(sim, sa.schedule);
  sim->add_option("--config", sa.config, "JSON configuration file");
  sim->add_option("--seed", sa.seed, "Random seed");
  sim->add_option("--out", sa.out, "Output directory (env WECAR_OUTPUT_DIR)");
  sim->add_option("--epochs", sa.epochs, "Epochs per stage");
  sim->add_option("--mode", sa.mode, "tcp or inproc")->check(CLI::IsMember({"tcp", "inproc"}));
  sim->add_option("--host", sa.host, "Edge address (TCP mode)");
  sim->add_option("--port", sa.port, "Edge port, 0 for any free port");
  sim->add_flag("--fault", sa.fault, "Drop the end during the last push and restart it");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*synth) return cmd_synth(synth_args, synth_seed, synth_out);
    if (*pre) return cmd_preprocess(pre_in, pre_out);
    if (*train) return cmd_train(ta);
    if (*eval) return cmd_eval(ev_bundle, ev_data, ev_out);
    if (*sim) return cmd_simulate(sa);
  } catch (const InputError& e) {
    spdlog::error("{}", e.what());
    std::cerr << app.help() << std::flush;
    return kUsage;
  } catch (const ConfigError& e) {
    spdlog::error("{}", e.what());
    return kUsage;
  } catch (const data::ScheduleError& e) {
    spdlog::error("{}", e.what());
    return kUsage;
  } catch (const edge::TransportError& e) {
    spdlog::error("{}", e.what());
    return kEnvironment;
  } catch (const fs::filesystem_error& e) {
    spdlog::error("{}", e.what());
    return kEnvironment;
  } catch (const std::exception& e) {
    spdlog::error("internal error: {}", e.what());
    return kInternal;
  }
  return kUsage;
}
