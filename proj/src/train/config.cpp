#include "wecar/train/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "wecar/core/errors.hpp"

namespace wecar::train {

using nlohmann::json;

PrefixInit parse_prefix_init(const std::string& s) {
  if (s == "adapter") return PrefixInit::Adapter;
  if (s == "zero") return PrefixInit::Zero;
  if (s == "random") return PrefixInit::Random;
  throw ConfigError("unknown prefix init '" + s + "' (adapter|zero|random)");
}

std::string to_string(PrefixInit p) {
  switch (p) {
    case PrefixInit::Adapter: return "adapter";
    case PrefixInit::Zero: return "zero";
    case PrefixInit::Random: return "random";
  }
  return "?";
}

void TrainConfig::validate() const {
  model.validate();
  distill.validate();
  if (batch == 0) throw ConfigError("batch must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ConfigError("test_fraction must be in (0, 1)");
  }
  if (epsilon.absolute && !(*epsilon.absolute >= 0.0)) {
    throw ConfigError("epsilon must be non-negative");
  }
  if (!(epsilon.percentile >= 0.0 && epsilon.percentile <= 100.0)) {
    throw ConfigError("epsilon percentile must be in [0, 100]");
  }
  if (!(random_prefix_std >= 0.0)) throw ConfigError("random_prefix_std must be >= 0");
}

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (!allowed.count(k)) throw ConfigError("unknown config key '" + where + k + "'");
  }
}

template <class T>
void get(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

model::EpsilonRule parse_epsilon(const json& v) {
  model::EpsilonRule r;
  if (v.is_number()) {
    r.absolute = v.get<double>();
  } else if (v.is_string() && v.get<std::string>().starts_with("p")) {
    try {
      r.percentile = std::stod(v.get<std::string>().substr(1));
    } catch (const std::exception&) {
      throw ConfigError("epsilon percentile must look like \"p30\"");
    }
  } else {
    throw ConfigError("epsilon must be a number or a string like \"p30\"");
  }
  return r;
}

}  // namespace

TrainConfig config_from_json(const json& j, TrainConfig c) {
  check_keys(j,
             {"n", "d", "heads", "ranges", "sigma", "prefix_len", "adapter_rank", "mlp_widths",
              "dropout", "epochs", "batch", "lr", "epsilon", "prefix_init", "random_prefix_std",
              "train_encoding_after_first", "task_local_ce", "distill_enabled", "seed",
              "test_fraction", "distill"},
             "");
  get(j, "n", c.model.n);
  get(j, "d", c.model.d);
  get(j, "heads", c.model.heads);
  get(j, "ranges", c.model.ranges);
  get(j, "sigma", c.model.sigma);
  get(j, "prefix_len", c.model.prefix_len);
  get(j, "adapter_rank", c.model.adapter_rank);
  get(j, "mlp_widths", c.model.mlp_widths);
  get(j, "dropout", c.model.dropout);
  get(j, "epochs", c.epochs);
  get(j, "batch", c.batch);
  get(j, "lr", c.lr);
  if (j.contains("epsilon")) c.epsilon = parse_epsilon(j.at("epsilon"));
  if (j.contains("prefix_init")) {
    std::string s;
    get(j, "prefix_init", s);
    c.prefix_init = parse_prefix_init(s);
  }
  get(j, "random_prefix_std", c.random_prefix_std);
  get(j, "train_encoding_after_first", c.train_encoding_after_first);
  get(j, "task_local_ce", c.task_local_ce);
  get(j, "distill_enabled", c.distill_enabled);
  get(j, "seed", c.seed);
  get(j, "test_fraction", c.test_fraction);

  const json dj = j.contains("distill") ? j.at("distill") : json::object();
  check_keys(dj,
             {"lambda_at", "lambda_vr", "lambda_log", "lambda_p", "lambda_ce", "epochs", "batch",
              "lr", "dropout", "rho", "task_local_ce"},
             "distill.");
  auto& d = c.distill;
  if (!dj.contains("epochs")) d.epochs = c.epochs;
  if (!dj.contains("batch")) d.batch = c.batch;
  if (!dj.contains("lr")) d.lr = c.lr;
  if (!dj.contains("dropout")) d.dropout = c.model.dropout;
  get(dj, "lambda_at", d.lambda_at);
  get(dj, "lambda_vr", d.lambda_vr);
  get(dj, "lambda_log", d.lambda_log);
  get(dj, "lambda_p", d.lambda_p);
  get(dj, "lambda_ce", d.lambda_ce);
  get(dj, "epochs", d.epochs);
  get(dj, "batch", d.batch);
  get(dj, "lr", d.lr);
  get(dj, "dropout", d.dropout);
  get(dj, "rho", d.rho);
  get(dj, "task_local_ce", d.task_local_ce);
  c.validate();
  return c;
}

nlohmann::ordered_json config_to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["n"] = c.model.n;
  j["d"] = c.model.d;
  j["heads"] = c.model.heads;
  j["ranges"] = c.model.ranges;
  j["sigma"] = c.model.sigma;
  j["prefix_len"] = c.model.prefix_len;
  j["adapter_rank"] = c.model.resolved_adapter_rank();
  j["mlp_widths"] = c.model.mlp_widths;
  j["dropout"] = c.model.dropout;
  j["epochs"] = c.epochs;
  j["batch"] = c.batch;
  j["lr"] = c.lr;
  if (c.epsilon.absolute) {
    j["epsilon"] = *c.epsilon.absolute;
  } else {
    std::ostringstream os;
    os << "p" << c.epsilon.percentile;
    j["epsilon"] = os.str();
  }
  j["prefix_init"] = to_string(c.prefix_init);
  j["random_prefix_std"] = c.random_prefix_std;
  j["train_encoding_after_first"] = c.train_encoding_after_first;
  j["task_local_ce"] = c.task_local_ce;
  j["distill_enabled"] = c.distill_enabled;
  j["seed"] = c.seed;
  j["test_fraction"] = c.test_fraction;
  const auto& d = c.distill;
  j["distill"] = {{"lambda_at", d.lambda_at}, {"lambda_vr", d.lambda_vr},
                  {"lambda_log", d.lambda_log}, {"lambda_p", d.lambda_p},
                  {"lambda_ce", d.lambda_ce},   {"epochs", d.epochs},
                  {"batch", d.batch},           {"lr", d.lr},
                  {"dropout", d.dropout},       {"rho", d.rho},
                  {"task_local_ce", d.task_local_ce}};
  return j;
}

TrainConfig load_config(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path.string() + ": " + e.what());
  }
  return config_from_json(j, std::move(base));
}

}  // namespace wecar::train
