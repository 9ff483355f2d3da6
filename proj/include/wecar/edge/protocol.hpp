#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wecar/core/errors.hpp"
#include "wecar/core/tensor.hpp"
#include "wecar/data/csi.hpp"

namespace wecar::edge {

enum class MsgType : std::uint8_t {
  Hello = 1,
  DataBatch = 2,
  TrainDone = 3,
  ModelPush = 4,
  Ack = 5,
  InferReq = 6,
  InferResp = 7,
  Error = 255,
};

bool is_known_type(std::uint8_t t);
std::string type_name(std::uint8_t t);

namespace errc {
inline constexpr std::uint16_t kUnknownType = 10;
inline constexpr std::uint16_t kBadPayload = 11;
inline constexpr std::uint16_t kMalformedBatch = 20;
inline constexpr std::uint16_t kInconsistentShape = 21;
inline constexpr std::uint16_t kTrainingFailed = 30;
inline constexpr std::uint16_t kNoData = 31;
inline constexpr std::uint16_t kModelAbsent = 40;
inline constexpr std::uint16_t kBadBundle = 41;
inline constexpr std::uint16_t kBadInferRequest = 42;
}  // namespace errc

/// Largest accepted frame body (type byte plus payload).
inline constexpr std::uint32_t kMaxFrameLength = 64u << 20;

/// On the wire: u32 length (payload size + 1), u8 type, payload.
struct Frame {
  std::uint8_t type = 0;
  std::vector<std::uint8_t> payload;

  MsgType msg() const { return static_cast<MsgType>(type); }
};

class ProtocolError : public Error {
 public:
  using Error::Error;
};

std::vector<std::uint8_t> encode_frame(const Frame& f);

/// Incremental decoder for a byte stream. A length of 0 or above
/// kMaxFrameLength is unrecoverable and raises ProtocolError.
class FrameDecoder {
 public:
  void feed(std::span<const std::uint8_t> bytes);
  std::optional<Frame> next();
  std::size_t buffered() const { return buf_.size() - pos_; }

 private:
  std::vector<std::uint8_t> buf_;
  std::size_t pos_ = 0;
};

/// Decodes exactly one frame spanning all of `bytes`.
Frame decode_frame(std::span<const std::uint8_t> bytes);

// Payload codecs. Decoders throw ProtocolError on malformed payloads.

Frame make_hello(std::uint32_t task_index);
std::uint32_t parse_hello(const Frame& f);

Frame make_ack(std::uint32_t value);
std::uint32_t parse_ack(const Frame& f);

Frame make_error(std::uint16_t code, const std::string& message);
struct ErrorInfo {
  std::uint16_t code = 0;
  std::string message;
};
ErrorInfo parse_error(const Frame& f);

Frame make_data_batch(const std::string& csv);
Frame make_train_done();
Frame make_model_push(std::vector<std::uint8_t> bundle);

/// u32 n, u32 d, n*d f32 values with NaN for missing cells.
Frame make_infer_req(const data::CsiMatrix& m);
data::CsiMatrix parse_infer_req(const Frame& f);

struct Prediction {
  std::uint32_t class_id = 0;
  std::vector<float> logits;
};
/// u32 class id, u32 logit count, f32 logits.
Frame make_infer_resp(const Prediction& p);
Prediction parse_infer_resp(const Frame& f);

}  // namespace wecar::edge
