#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "wecar/data/dataset.hpp"
#include "wecar/edge/protocol.hpp"
#include "wecar/edge/transport.hpp"
#include "wecar/model/model.hpp"
#include "wecar/train/config.hpp"
#include "wecar/train/trainer.hpp"

namespace wecar::edge {

/// One line per frame crossing an endpoint, e.g. "edge <- DATA_BATCH 812".
using Transcript = std::function<void(const std::string&)>;

/// Training side. Accumulates DATA_BATCH samples for the current task; on
/// TRAIN_DONE it runs the next stage pair and answers with MODEL_PUSH.
/// Not thread-safe: one caller at a time.
class EdgeService {
 public:
  explicit EdgeService(train::TrainConfig cfg);

  /// Responses to one incoming frame. Never throws for bad input.
  std::vector<Frame> handle(const Frame& in);

  std::size_t tasks_done() const { return session_ ? session_->tasks_done() : 0; }
  std::size_t pending_samples() const { return pending_.size(); }
  /// Model that the latest push carried.
  const model::Model* pushed_model() const;
  /// Task index confirmed by the most recent ACK from an end.
  std::uint32_t acked() const { return acked_; }
  const train::ContinualSession* session() const { return session_.get(); }

 private:
  std::vector<Frame> on_batch(const Frame& in);
  std::vector<Frame> on_train_done();
  std::vector<Frame> on_hello(const Frame& in);
  std::vector<Frame> on_infer(const Frame& in);

  train::TrainConfig cfg_;
  std::unique_ptr<train::ContinualSession> session_;
  std::optional<std::pair<std::size_t, std::size_t>> shape_;  // n, d
  std::vector<train::Example> pending_;
  std::set<std::size_t> seen_classes_;
  std::vector<std::uint8_t> last_bundle_;
  std::uint32_t acked_ = 0;
};

/// Inference side. Holds an immutable model that is replaced atomically on
/// MODEL_PUSH; inference runs on a snapshot taken at request time.
class EndRuntime {
 public:
  /// Responses to one incoming frame. Safe to call from several threads.
  std::vector<Frame> handle(const Frame& in);

  /// Interpolates missing cells, then runs the current model.
  std::optional<Prediction> infer(const data::CsiMatrix& x) const;
  std::shared_ptr<const model::Model> current() const;
  std::uint32_t installed_task() const;
  /// Installs a serialized model; throws BundleError and keeps the old model
  /// on failure.
  void install(std::span<const std::uint8_t> bundle);

 private:
  mutable std::mutex mu_;
  std::shared_ptr<const model::Model> model_;
};

/// Serves frames from `conn` through `handler` until the peer closes.
/// An unusable length prefix gets one ERROR(10) frame and ends the loop.
void serve_connection(Connection& conn, const std::function<std::vector<Frame>(const Frame&)>& handler,
                      const Transcript& log = {}, const std::string& who = "");

/// Yields the next connection, or nullopt to stop.
using Acceptor = std::function<std::optional<Connection>()>;

/// Serves connections one after another with `edge` until `accept` stops.
void edge_serve(const Acceptor& accept, EdgeService& edge, const Transcript& log = {});
/// Stops after `max_connections` connections when it is non-zero.
void edge_serve(TcpListener& listener, EdgeService& edge, std::size_t max_connections = 0,
                const Transcript& log = {});

/// End-side driver of a connection to an edge: uploads task data, waits for
/// the resulting push and installs it through `runtime`.
class EndClient {
 public:
  EndClient(Connection conn, EndRuntime& runtime, Transcript log = {});

  /// Sends HELLO with the installed task index and processes the edge's
  /// answer, including any re-push. Returns the edge's task index.
  std::uint32_t hello();
  /// Sends one DATA_BATCH; returns the edge's sample count or throws on ERROR.
  std::uint32_t upload(const data::Dataset& batch);
  /// Sends TRAIN_DONE, installs the pushed model and ACKs it. Returns the
  /// installed task index.
  std::uint32_t train_done();
  /// Asks the edge to run inference on its own copy of the pushed model.
  Prediction remote_infer(const data::CsiMatrix& x);
  Connection& connection() { return conn_; }

 private:
  Frame expect(MsgType t);
  void install_push(const Frame& f);

  Connection conn_;
  EndRuntime& runtime_;
  Transcript log_;
};

/// Thrown by EndClient when the edge answers with ERROR.
class RemoteError : public Error {
 public:
  RemoteError(std::uint16_t code, const std::string& msg);
  std::uint16_t code() const { return code_; }

 private:
  std::uint16_t code_;
};

Prediction predict(const model::Model& m, const data::CsiMatrix& x);

}  // namespace wecar::edge
