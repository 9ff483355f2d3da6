#include "wecar/edge/protocol.hpp"

#include <cmath>
#include <cstring>
#include <limits>

namespace wecar::edge {

bool is_known_type(std::uint8_t t) { return (t >= 1 && t <= 7) || t == 255; }

std::string type_name(std::uint8_t t) {
  switch (t) {
    case 1: return "HELLO";
    case 2: return "DATA_BATCH";
    case 3: return "TRAIN_DONE";
    case 4: return "MODEL_PUSH";
    case 5: return "ACK";
    case 6: return "INFER_REQ";
    case 7: return "INFER_RESP";
    case 255: return "ERROR";
  }
  return "UNKNOWN(" + std::to_string(t) + ")";
}

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_f32(std::vector<std::uint8_t>& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[off + i]) << (8 * i);
  return v;
}

float get_f32(std::span<const std::uint8_t> b, std::size_t off) {
  const std::uint32_t bits = get_u32(b, off);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

void expect_type(const Frame& f, MsgType t) {
  if (f.msg() != t) {
    throw ProtocolError("expected " + type_name(static_cast<std::uint8_t>(t)) + ", got " +
                        type_name(f.type));
  }
}

}  // namespace

std::vector<std::uint8_t> encode_frame(const Frame& f) {
  if (f.payload.size() + 1 > kMaxFrameLength) throw ProtocolError("frame too large");
  std::vector<std::uint8_t> out;
  out.reserve(f.payload.size() + 5);
  put_u32(out, static_cast<std::uint32_t>(f.payload.size() + 1));
  out.push_back(f.type);
  out.insert(out.end(), f.payload.begin(), f.payload.end());
  return out;
}

void FrameDecoder::feed(std::span<const std::uint8_t> bytes) {
  if (pos_ > 0 && pos_ == buf_.size()) {
    buf_.clear();
    pos_ = 0;
  }
  buf_.insert(buf_.end(), bytes.begin(), bytes.end());
}

std::optional<Frame> FrameDecoder::next() {
  if (buffered() < 4) return std::nullopt;
  const std::uint32_t len = get_u32(buf_, pos_);
  if (len == 0 || len > kMaxFrameLength) {
    throw ProtocolError("invalid frame length " + std::to_string(len));
  }
  if (buffered() < 4 + static_cast<std::size_t>(len)) return std::nullopt;
  Frame f;
  f.type = buf_[pos_ + 4];
  f.payload.assign(buf_.begin() + static_cast<std::ptrdiff_t>(pos_ + 5),
                   buf_.begin() + static_cast<std::ptrdiff_t>(pos_ + 4 + len));
  pos_ += 4 + len;
  if (pos_ > (1u << 20) && pos_ * 2 > buf_.size()) {
    buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(pos_));
    pos_ = 0;
  }
  return f;
}

Frame decode_frame(std::span<const std::uint8_t> bytes) {
  FrameDecoder d;
  d.feed(bytes);
  auto f = d.next();
  if (!f) throw ProtocolError("incomplete frame");
  if (d.buffered() != 0) throw ProtocolError("trailing bytes after frame");
  return *f;
}

Frame make_hello(std::uint32_t task_index) {
  Frame f{static_cast<std::uint8_t>(MsgType::Hello), {}};
  put_u32(f.payload, task_index);
  return f;
}

std::uint32_t parse_hello(const Frame& f) {
  expect_type(f, MsgType::Hello);
  if (f.payload.size() != 4) throw ProtocolError("HELLO payload must be 4 bytes");
  return get_u32(f.payload, 0);
}

Frame make_ack(std::uint32_t value) {
  Frame f{static_cast<std::uint8_t>(MsgType::Ack), {}};
  put_u32(f.payload, value);
  return f;
}

std::uint32_t parse_ack(const Frame& f) {
  expect_type(f, MsgType::Ack);
  if (f.payload.size() != 4) throw ProtocolError("ACK payload must be 4 bytes");
  return get_u32(f.payload, 0);
}

Frame make_error(std::uint16_t code, const std::string& message) {
  Frame f{static_cast<std::uint8_t>(MsgType::Error), {}};
  put_u16(f.payload, code);
  const std::size_t n = std::min<std::size_t>(message.size(), 4096);
  f.payload.insert(f.payload.end(), message.begin(), message.begin() + static_cast<std::ptrdiff_t>(n));
  return f;
}

ErrorInfo parse_error(const Frame& f) {
  expect_type(f, MsgType::Error);
  if (f.payload.size() < 2) throw ProtocolError("ERROR payload too short");
  ErrorInfo e;
  e.code = static_cast<std::uint16_t>(f.payload[0] | (f.payload[1] << 8));
  e.message.assign(f.payload.begin() + 2, f.payload.end());
  return e;
}

Frame make_data_batch(const std::string& csv) {
  return {static_cast<std::uint8_t>(MsgType::DataBatch), {csv.begin(), csv.end()}};
}

Frame make_train_done() { return {static_cast<std::uint8_t>(MsgType::TrainDone), {}}; }

Frame make_model_push(std::vector<std::uint8_t> bundle) {
  return {static_cast<std::uint8_t>(MsgType::ModelPush), std::move(bundle)};
}

Frame make_infer_req(const data::CsiMatrix& m) {
  Frame f{static_cast<std::uint8_t>(MsgType::InferReq), {}};
  put_u32(f.payload, static_cast<std::uint32_t>(m.n()));
  put_u32(f.payload, static_cast<std::uint32_t>(m.d()));
  for (std::size_t t = 0; t < m.n(); ++t)
    for (std::size_t i = 0; i < m.d(); ++i) {
      put_f32(f.payload, m.is_missing(t, i) ? std::numeric_limits<float>::quiet_NaN()
                                            : static_cast<float>(m.at(t, i)));
    }
  return f;
}

data::CsiMatrix parse_infer_req(const Frame& f) {
  expect_type(f, MsgType::InferReq);
  if (f.payload.size() < 8) throw ProtocolError("INFER_REQ payload too short");
  const std::uint64_t n = get_u32(f.payload, 0), d = get_u32(f.payload, 4);
  if (n == 0 || d == 0 || n * d * 4 + 8 != f.payload.size()) {
    throw ProtocolError("INFER_REQ size does not match " + std::to_string(n) + "x" +
                        std::to_string(d));
  }
  data::CsiMatrix m(n, d);
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t i = 0; i < d; ++i) {
      const float v = get_f32(f.payload, 8 + 4 * (t * d + i));
      if (std::isnan(v)) {
        m.set_missing(t, i);
      } else if (std::isinf(v)) {
        throw ProtocolError("INFER_REQ contains an infinite value");
      } else {
        m.set(t, i, static_cast<double>(v));
      }
    }
  return m;
}

Frame make_infer_resp(const Prediction& p) {
  Frame f{static_cast<std::uint8_t>(MsgType::InferResp), {}};
  put_u32(f.payload, p.class_id);
  put_u32(f.payload, static_cast<std::uint32_t>(p.logits.size()));
  for (float v : p.logits) put_f32(f.payload, v);
  return f;
}

Prediction parse_infer_resp(const Frame& f) {
  expect_type(f, MsgType::InferResp);
  if (f.payload.size() < 8) throw ProtocolError("INFER_RESP payload too short");
  Prediction p;
  p.class_id = get_u32(f.payload, 0);
  const std::uint64_t c = get_u32(f.payload, 4);
  if (8 + 4 * c != f.payload.size()) throw ProtocolError("INFER_RESP size mismatch");
  for (std::size_t i = 0; i < c; ++i) p.logits.push_back(get_f32(f.payload, 8 + 4 * i));
  return p;
}

}  // namespace wecar::edge
