#include "wecar/edge/service.hpp"

#include <algorithm>

#include "wecar/data/csi.hpp"
#include "wecar/edge/bundle.hpp"

namespace wecar::edge {

Prediction predict(const model::Model& m, const data::CsiMatrix& x) {
  const auto clean = data::interpolate_missing(x);
  const auto logits = m.logits(clean.values());
  Prediction p;
  const std::size_t best = model::argmax(logits);
  p.class_id = static_cast<std::uint32_t>(m.classifier.class_ids.at(best));
  for (double v : logits.data()) p.logits.push_back(static_cast<float>(v));
  return p;
}

RemoteError::RemoteError(std::uint16_t code, const std::string& msg)
    : Error("remote error " + std::to_string(code) + ": " + msg), code_(code) {}

// ---- edge ----

EdgeService::EdgeService(train::TrainConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

const model::Model* EdgeService::pushed_model() const {
  if (!session_ || last_bundle_.empty()) return nullptr;
  if (session_->lwm()) return &*session_->lwm();
  return &session_->fsm();
}

std::vector<Frame> EdgeService::handle(const Frame& in) {
  try {
    switch (in.type) {
      case static_cast<std::uint8_t>(MsgType::Hello): return on_hello(in);
      case static_cast<std::uint8_t>(MsgType::DataBatch): return on_batch(in);
      case static_cast<std::uint8_t>(MsgType::TrainDone):
        if (!in.payload.empty()) return {make_error(errc::kBadPayload, "TRAIN_DONE takes no payload")};
        return on_train_done();
      case static_cast<std::uint8_t>(MsgType::Ack):
        acked_ = parse_ack(in);
        return {};
      case static_cast<std::uint8_t>(MsgType::InferReq): return on_infer(in);
      case static_cast<std::uint8_t>(MsgType::Error): return {};
      default:
        return {make_error(errc::kUnknownType, "edge does not accept " + type_name(in.type))};
    }
  } catch (const ProtocolError& e) {
    return {make_error(errc::kBadPayload, e.what())};
  }
}

std::vector<Frame> EdgeService::on_hello(const Frame& in) {
  const std::uint32_t end_task = parse_hello(in);
  const auto pushed = static_cast<std::uint32_t>(last_bundle_.empty() ? 0 : tasks_done());
  std::vector<Frame> out{make_hello(pushed)};
  if (!last_bundle_.empty() && end_task < pushed) out.push_back(make_model_push(last_bundle_));
  return out;
}

std::vector<Frame> EdgeService::on_batch(const Frame& in) {
  const std::string text(in.payload.begin(), in.payload.end());
  data::Dataset ds;
  try {
    ds = data::parse_dataset(text, false);
  } catch (const Error& e) {
    return {make_error(errc::kMalformedBatch, e.what())};
  }
  if (ds.samples.empty()) return {make_error(errc::kMalformedBatch, "batch has no samples")};
  if (shape_ && (shape_->first != ds.n || shape_->second != ds.d)) {
    return {make_error(errc::kInconsistentShape,
                       "batch is " + std::to_string(ds.n) + "x" + std::to_string(ds.d) +
                           ", expected " + std::to_string(shape_->first) + "x" +
                           std::to_string(shape_->second))};
  }
  std::vector<train::Example> fresh;
  try {
    for (const auto& s : ds.samples) {
      if (seen_classes_.count(s.label)) {
        return {make_error(errc::kMalformedBatch,
                           "class " + std::to_string(s.label) + " was learned in an earlier task")};
      }
      fresh.push_back({data::interpolate_missing(s.matrix).values(), s.label});
    }
  } catch (const Error& e) {
    return {make_error(errc::kMalformedBatch, e.what())};
  }
  shape_ = {ds.n, ds.d};
  pending_.insert(pending_.end(), std::make_move_iterator(fresh.begin()),
                  std::make_move_iterator(fresh.end()));
  return {make_ack(static_cast<std::uint32_t>(pending_.size()))};
}

std::vector<Frame> EdgeService::on_train_done() {
  if (pending_.empty()) return {make_error(errc::kNoData, "no data for this task")};
  std::set<std::size_t> classes;
  for (const auto& ex : pending_) classes.insert(ex.class_id);
  const std::vector<std::size_t> task(classes.begin(), classes.end());
  auto data = std::move(pending_);
  pending_.clear();
  try {
    std::unique_ptr<train::ContinualSession> next;
    if (session_) {
      next = std::make_unique<train::ContinualSession>(*session_);
    } else {
      auto cfg = cfg_;
      cfg.model.n = shape_->first;
      cfg.model.d = shape_->second;
      next = std::make_unique<train::ContinualSession>(cfg);
    }
    next->learn_task(task, data);
    auto bundle = serialize(next->lwm() ? *next->lwm() : next->fsm());
    session_ = std::move(next);
    seen_classes_.insert(classes.begin(), classes.end());
    last_bundle_ = bundle;
    return {make_model_push(std::move(bundle))};
  } catch (const std::exception& e) {
    if (!session_) shape_.reset();
    return {make_error(errc::kTrainingFailed, e.what())};
  }
}

std::vector<Frame> EdgeService::on_infer(const Frame& in) {
  const auto* m = pushed_model();
  if (!m) return {make_error(errc::kModelAbsent, "no model has been pushed")};
  try {
    return {make_infer_resp(predict(*m, parse_infer_req(in)))};
  } catch (const Error& e) {
    return {make_error(errc::kBadInferRequest, e.what())};
  }
}

// ---- end ----

std::shared_ptr<const model::Model> EndRuntime::current() const {
  std::lock_guard lock(mu_);
  return model_;
}

std::uint32_t EndRuntime::installed_task() const {
  auto m = current();
  return m ? static_cast<std::uint32_t>(m->task_index) : 0;
}

void EndRuntime::install(std::span<const std::uint8_t> bundle) {
  auto m = std::make_shared<const model::Model>(deserialize(bundle));
  std::lock_guard lock(mu_);
  model_ = std::move(m);
}

std::optional<Prediction> EndRuntime::infer(const data::CsiMatrix& x) const {
  auto m = current();
  if (!m) return std::nullopt;
  return predict(*m, x);
}

std::vector<Frame> EndRuntime::handle(const Frame& in) {
  switch (in.type) {
    case static_cast<std::uint8_t>(MsgType::ModelPush):
      try {
        install(in.payload);
        return {make_ack(installed_task())};
      } catch (const Error& e) {
        return {make_error(errc::kBadBundle, e.what())};
      }
    case static_cast<std::uint8_t>(MsgType::InferReq): {
      auto m = current();
      if (!m) return {make_error(errc::kModelAbsent, "no model installed")};
      try {
        return {make_infer_resp(predict(*m, parse_infer_req(in)))};
      } catch (const Error& e) {
        return {make_error(errc::kBadInferRequest, e.what())};
      }
    }
    case static_cast<std::uint8_t>(MsgType::Hello):
      if (in.payload.size() != 4) return {make_error(errc::kBadPayload, "HELLO payload must be 4 bytes")};
      return {make_hello(installed_task())};
    case static_cast<std::uint8_t>(MsgType::Ack):
    case static_cast<std::uint8_t>(MsgType::Error):
      return {};
    default:
      return {make_error(errc::kUnknownType, "end does not accept " + type_name(in.type))};
  }
}

// ---- loops ----

namespace {

std::string describe(const Frame& f) {
  std::string s = type_name(f.type);
  try {
    switch (f.msg()) {
      case MsgType::Hello: return s + " task=" + std::to_string(parse_hello(f));
      case MsgType::Ack: return s + " value=" + std::to_string(parse_ack(f));
      case MsgType::Error: return s + " code=" + std::to_string(parse_error(f).code);
      default: break;
    }
  } catch (const ProtocolError&) {
  }
  return s + " bytes=" + std::to_string(f.payload.size());
}

}  // namespace

void serve_connection(Connection& conn,
                      const std::function<std::vector<Frame>(const Frame&)>& handler,
                      const Transcript& log, const std::string& who) {
  try {
    for (;;) {
      std::optional<Frame> f;
      try {
        f = conn.recv();
      } catch (const ProtocolError& e) {
        conn.send(make_error(errc::kUnknownType, e.what()));
        return;
      }
      if (!f) return;
      if (log) log(who + " <- " + describe(*f));
      for (const auto& r : handler(*f)) {
        if (log) log(who + " -> " + describe(r));
        conn.send(r);
      }
    }
  } catch (const TransportError& e) {
    if (log) log(who + " connection lost: " + e.what());
  }
}

void edge_serve(const Acceptor& accept, EdgeService& edge, const Transcript& log) {
  while (auto c = accept()) {
    serve_connection(*c, [&](const Frame& f) { return edge.handle(f); }, log, "edge");
  }
}

void edge_serve(TcpListener& listener, EdgeService& edge, std::size_t max_connections,
                const Transcript& log) {
  std::size_t served = 0;
  edge_serve(
      [&]() -> std::optional<Connection> {
        if (max_connections != 0 && served == max_connections) return std::nullopt;
        ++served;
        return listener.accept();
      },
      edge, log);
}

EndClient::EndClient(Connection conn, EndRuntime& runtime, Transcript log)
    : conn_(std::move(conn)), runtime_(runtime), log_(std::move(log)) {}

void EndClient::install_push(const Frame& f) {
  if (log_) log_("end <- " + describe(f));
  for (const auto& r : runtime_.handle(f)) {
    if (log_) log_("end -> " + describe(r));
    conn_.send(r);
  }
}

Frame EndClient::expect(MsgType t) {
  for (;;) {
    auto f = conn_.recv();
    if (!f) throw TransportError("edge closed the connection");
    if (f->msg() == t) {
      if (t != MsgType::ModelPush && t != MsgType::InferResp && log_) log_("end <- " + describe(*f));
      return *f;
    }
    if (f->msg() == MsgType::ModelPush) {
      install_push(*f);
      continue;
    }
    if (log_) log_("end <- " + describe(*f));
    if (f->msg() == MsgType::Error) {
      const auto e = parse_error(*f);
      throw RemoteError(e.code, e.message);
    }
    throw ProtocolError("expected " + type_name(static_cast<std::uint8_t>(t)) + ", got " +
                        type_name(f->type));
  }
}

std::uint32_t EndClient::hello() {
  const auto mine = runtime_.installed_task();
  if (log_) log_("end -> HELLO task=" + std::to_string(mine));
  conn_.send(make_hello(mine));
  const auto edge_task = parse_hello(expect(MsgType::Hello));
  if (edge_task > mine) install_push(expect(MsgType::ModelPush));
  return edge_task;
}

std::uint32_t EndClient::upload(const data::Dataset& batch) {
  const auto f = make_data_batch(data::format_dataset(batch));
  if (log_) log_("end -> " + describe(f));
  conn_.send(f);
  return parse_ack(expect(MsgType::Ack));
}

std::uint32_t EndClient::train_done() {
  if (log_) log_("end -> TRAIN_DONE bytes=0");
  conn_.send(make_train_done());
  install_push(expect(MsgType::ModelPush));
  return runtime_.installed_task();
}

Prediction EndClient::remote_infer(const data::CsiMatrix& x) {
  conn_.send(make_infer_req(x));
  return parse_infer_resp(expect(MsgType::InferResp));
}

}  // namespace wecar::edge
