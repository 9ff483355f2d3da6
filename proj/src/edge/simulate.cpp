#include "wecar/edge/simulate.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <mutex>
#include <thread>

#include "wecar/edge/bundle.hpp"
#include "wecar/edge/service.hpp"

namespace wecar::edge {

nlohmann::ordered_json SimulationResult::to_json() const {
  nlohmann::ordered_json j;
  j["pushes"] = pushes;
  j["model_absent_before_push"] = model_absent_before_push;
  j["fidelity"] = {{"inputs", fidelity_inputs},
                   {"argmax_agree", argmax_agree},
                   {"max_logit_diff", max_logit_diff},
                   {"ok", fidelity_ok()}};
  j["end_accuracy"] = end_accuracy;
  j["final_bundle_crc32"] = final_bundle_crc;
  return j;
}

namespace {

/// Hands socketpair ends to an edge thread.
class InProcessQueue {
 public:
  void push(Connection c) {
    {
      std::lock_guard lock(mu_);
      q_.push_back(std::move(c));
    }
    cv_.notify_one();
  }
  void close() {
    {
      std::lock_guard lock(mu_);
      closed_ = true;
    }
    cv_.notify_one();
  }
  std::optional<Connection> pop() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return closed_ || !q_.empty(); });
    if (q_.empty()) return std::nullopt;
    Connection c = std::move(q_.front());
    q_.pop_front();
    return c;
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Connection> q_;
  bool closed_ = false;
};

Transcript file_log(std::shared_ptr<std::ofstream> out) {
  if (!out) return {};
  return [out](const std::string& line) { *out << line << '\n' << std::flush; };
}

struct EndScript {
  const data::Dataset& ds;
  const data::Dataset& train_ds;
  const data::Dataset& test_ds;
  const data::TaskSchedule& schedule;
  const SimulationOptions& opts;
  std::function<Connection()> connect;
  SimulationResult& res;

  void run() {
    auto log = [this](const std::string& s) { res.transcript.push_back(s); };

    auto runtime = std::make_unique<EndRuntime>();
    auto client = std::make_unique<EndClient>(connect(), *runtime, log);
    client->hello();
    const auto probe = runtime->handle(make_infer_req(ds.samples.front().matrix));
    res.model_absent_before_push = probe.size() == 1 && probe[0].msg() == MsgType::Error &&
                                   parse_error(probe[0]).code == errc::kModelAbsent;

    std::vector<std::size_t> seen;
    for (std::size_t t = 0; t < schedule.num_tasks(); ++t) {
      const auto& classes = schedule.tasks[t];
      seen.insert(seen.end(), classes.begin(), classes.end());
      upload_task(*client, classes);
      const bool last = t + 1 == schedule.num_tasks();
      if (last && opts.fault_inject) {
        log("end -> TRAIN_DONE bytes=0");
        client->connection().send(make_train_done());
        log("end killed before the push arrived; restarting");
        client.reset();
        runtime = std::make_unique<EndRuntime>();
        client = std::make_unique<EndClient>(connect(), *runtime, log);
        client->hello();
      } else {
        client->train_done();
      }
      res.pushes.push_back(runtime->installed_task());
      check_fidelity(*client, *runtime, seen);
    }

    std::size_t correct = 0, total = 0;
    for (const auto& s : test_ds.samples) {
      auto p = runtime->infer(s.matrix);
      if (p && p->class_id == s.label) ++correct;
      ++total;
    }
    res.end_accuracy = total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
    res.final_bundle_crc = crc32(serialize(*runtime->current()));
  }

  void upload_task(EndClient& client, const std::vector<std::size_t>& classes) {
    // Only the training side is uploaded; the rest stays on the end for checks.
    data::Dataset batch{{}, ds.n, ds.d, ds.num_classes};
    auto flush = [&] {
      if (batch.samples.empty()) return;
      client.upload(batch);
      batch.samples.clear();
    };
    for (const auto& s : train_ds.samples) {
      if (std::find(classes.begin(), classes.end(), s.label) == classes.end()) continue;
      batch.samples.push_back(s);
      if (batch.samples.size() == opts.batch_size) flush();
    }
    flush();
  }

  void check_fidelity(EndClient& client, const EndRuntime& runtime,
                      const std::vector<std::size_t>& seen) {
    std::vector<const data::CsiMatrix*> pool;
    for (const auto* part : {&test_ds, &train_ds}) {
      for (const auto& s : part->samples) {
        if (std::find(seen.begin(), seen.end(), s.label) != seen.end()) pool.push_back(&s.matrix);
      }
    }
    std::vector<data::CsiMatrix> inputs;
    for (std::size_t i = 0; i < opts.fidelity_inputs && !pool.empty(); ++i) {
      inputs.push_back(*pool[i % pool.size()]);
    }
    for (const auto& x : inputs) {
      const auto local = runtime.infer(x);
      const auto remote = client.remote_infer(x);
      ++res.fidelity_inputs;
      if (local && local->class_id == remote.class_id) ++res.argmax_agree;
      if (!local || local->logits.size() != remote.logits.size()) {
        res.max_logit_diff = INFINITY;
        continue;
      }
      for (std::size_t k = 0; k < remote.logits.size(); ++k) {
        res.max_logit_diff = std::max(
            res.max_logit_diff,
            std::abs(static_cast<double>(local->logits[k]) - static_cast<double>(remote.logits[k])));
      }
    }
  }
};

}  // namespace

SimulationResult simulate(const data::Dataset& ds, const data::TaskSchedule& schedule,
                          const train::TrainConfig& cfg, const SimulationOptions& opts) {
  if (ds.samples.empty()) throw ConfigError("simulate: empty dataset");
  if (opts.batch_size == 0) throw ConfigError("simulate: batch size must be >= 1");
  cfg.validate();
  std::shared_ptr<std::ofstream> edge_out;
  if (opts.edge_log) {
    edge_out = std::make_shared<std::ofstream>(*opts.edge_log, std::ios::trunc);
    if (!*edge_out) throw Error("cannot write " + opts.edge_log->string());
  }

  const auto [train_ds, test_ds] = data::split_train_test(ds, cfg.test_fraction, cfg.seed);
  SimulationResult res;
  if (opts.mode == SimMode::Tcp) {
    TcpListener listener = TcpListener::bind(opts.host, opts.port);
    const std::uint16_t port = listener.port();
    const pid_t child = ::fork();
    if (child < 0) throw TransportError("fork failed");
    if (child == 0) {
      int code = 0;
      try {
        EdgeService edge(cfg);
        edge_serve(listener, edge, opts.fault_inject ? 2 : 1, file_log(edge_out));
      } catch (...) {
        code = 1;
      }
      if (edge_out) edge_out->flush();
      ::_exit(code);
    }
    listener.close();
    auto wait_child = [&] {
      int status = 0;
      ::waitpid(child, &status, 0);
      return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    };
    try {
      EndScript{ds, train_ds, test_ds, schedule, opts, [&] { return connect_tcp(opts.host, port); }, res}.run();
    } catch (...) {
      ::kill(child, SIGTERM);
      wait_child();
      throw;
    }
    if (wait_child() != 0) throw Error("edge process failed");
    return res;
  }

  InProcessQueue queue;
  EdgeService edge(cfg);
  std::thread edge_thread(
      [&] { edge_serve([&] { return queue.pop(); }, edge, file_log(edge_out)); });
  try {
    EndScript{ds,
              train_ds,
              test_ds,
              schedule,
              opts,
              [&] {
                auto [mine, theirs] = socket_pair();
                queue.push(std::move(theirs));
                return std::move(mine);
              },
              res}
        .run();
  } catch (...) {
    queue.close();
    edge_thread.join();
    throw;
  }
  queue.close();
  edge_thread.join();
  return res;
}

}  // namespace wecar::edge
