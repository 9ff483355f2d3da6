#include "fuzz.hpp"

#include <algorithm>
#include <exception>
#include <random>

#include "wecar/core/errors.hpp"
#include "wecar/data/dataset.hpp"
#include "wecar/data/synth.hpp"
#include "wecar/edge/bundle.hpp"
#include "wecar/edge/protocol.hpp"
#include "wecar/edge/service.hpp"
#include "wecar/train/trainer.hpp"

namespace wecar::testing {

using edge::Frame;
using edge::MsgType;
using Bytes = std::vector<std::uint8_t>;

train::TrainConfig fuzz_config() {
  train::TrainConfig cfg;
  cfg.model.n = 6;
  cfg.model.d = 4;
  cfg.model.heads = 2;
  cfg.model.ranges = 2;
  cfg.model.prefix_len = 2;
  cfg.model.mlp_widths = {4};
  cfg.epochs = 1;
  cfg.distill.epochs = 1;
  return cfg;
}

model::Model sample_model(std::uint64_t seed) {
  auto cfg = fuzz_config();
  cfg.seed = seed;
  cfg.distill_enabled = false;
  auto ds = data::synthesize({.classes = 2, .per_class = 4, .n = 6, .d = 4, .seed = seed});
  train::ContinualSession s(cfg);
  const std::vector<std::size_t> classes = {0, 1};
  s.learn_task(classes, train::to_examples(ds));
  return s.fsm();
}

namespace {

void fail(FuzzStats& st, const std::string& what) {
  if (st.failures++ == 0) st.first_failure = what;
}

void mutate(Bytes& b, core::Rng& rng) {
  std::uniform_int_distribution<int> byte(0, 255);
  switch (rng() % 3) {
    case 0:
      if (!b.empty()) {
        for (int k = 1 + static_cast<int>(rng() % 3); k > 0; --k) b[rng() % b.size()] ^= 1 + rng() % 255;
      }
      break;
    case 1:
      if (!b.empty()) b.resize(rng() % b.size());
      break;
    default:
      for (int k = 1 + static_cast<int>(rng() % 8); k > 0; --k) b.push_back(static_cast<std::uint8_t>(byte(rng)));
  }
}

Bytes random_bytes(std::size_t n, core::Rng& rng) {
  Bytes b(n);
  for (auto& x : b) x = static_cast<std::uint8_t>(rng());
  return b;
}

std::string batch_csv(core::Rng& rng) {
  data::Dataset ds = data::synthesize(
      {.classes = 2, .per_class = 2, .n = 6, .d = 4, .missing_rate = 0.2, .seed = rng()});
  const std::size_t base = rng() % 40;
  for (auto& s : ds.samples) s.label += base;
  ds.num_classes += base;
  if (rng() % 10 == 0) {
    ds.d = 3;  // inconsistent shape
    for (auto& s : ds.samples) {
      data::CsiMatrix m(6, 3);
      for (std::size_t t = 0; t < 6; ++t)
        for (std::size_t i = 0; i < 3; ++i) m.set(t, i, s.matrix.values()(t, i));
      s.matrix = m;
    }
  }
  return data::format_dataset(ds);
}

Frame valid_frame(core::Rng& rng, const Bytes& bundle, const model::Model& m) {
  switch (rng() % 7) {
    case 0: return edge::make_hello(static_cast<std::uint32_t>(rng() % 5));
    case 1:
    case 2: return edge::make_data_batch(batch_csv(rng));
    case 3: return edge::make_train_done();
    case 4: return edge::make_model_push(bundle);
    case 5: return edge::make_ack(static_cast<std::uint32_t>(rng() % 5));
    default: {
      data::CsiMatrix x(m.config.n, m.config.d);
      std::normal_distribution<double> g;
      for (std::size_t t = 0; t < x.n(); ++t)
        for (std::size_t i = 0; i < x.d(); ++i) {
          if (rng() % 6 == 0) x.set_missing(t, i);
          else x.set(t, i, g(rng));
        }
      return edge::make_infer_req(x);
    }
  }
}

/// A response must be a known type and survive encode/decode unchanged.
void check_response(FuzzStats& st, const Frame& r) {
  if (!edge::is_known_type(r.type)) {
    fail(st, "response of unknown type " + std::to_string(r.type));
    return;
  }
  try {
    Frame back = edge::decode_frame(edge::encode_frame(r));
    if (back.type != r.type || back.payload != r.payload) fail(st, "response does not round-trip");
    if (r.msg() == MsgType::Error) edge::parse_error(r);
  } catch (const std::exception& e) {
    fail(st, std::string("malformed response: ") + e.what());
  }
}

}  // namespace

FuzzStats fuzz_frames(std::uint64_t seed, std::size_t cases, const model::Model& valid_model) {
  core::Rng rng(seed);
  FuzzStats st;
  edge::EdgeService edge_svc(fuzz_config());
  edge::EndRuntime end;
  const Bytes bundle = edge::serialize(valid_model);

  for (std::size_t c = 0; c < cases; ++c) {
    ++st.cases;
    Bytes wire;
    const auto kind = rng() % 4;
    if (kind == 0) {
      Frame f{static_cast<std::uint8_t>(rng()), random_bytes(rng() % 48, rng)};
      wire = edge::encode_frame(f);
    } else if (kind == 1) {
      Frame f = valid_frame(rng, bundle, valid_model);
      mutate(f.payload, rng);
      wire = edge::encode_frame(f);
    } else if (kind == 2) {
      wire = edge::encode_frame(valid_frame(rng, bundle, valid_model));
    } else {
      wire = random_bytes(rng() % 64, rng);
      if (rng() % 2 == 0) mutate(wire, rng);
    }

    edge::FrameDecoder dec;
    std::size_t pos = 0;
    try {
      while (pos < wire.size()) {
        const std::size_t chunk = std::min<std::size_t>(wire.size() - pos, 1 + rng() % 32);
        dec.feed(std::span(wire).subspan(pos, chunk));
        pos += chunk;
        while (auto f = dec.next()) {
          ++st.frames_handled;
          for (const auto& r : edge_svc.handle(*f)) {
            check_response(st, r);
            if (r.msg() == MsgType::ModelPush) {
              for (const auto& a : end.handle(r)) check_response(st, a);
            }
          }
          for (const auto& r : end.handle(*f)) check_response(st, r);
        }
      }
    } catch (const edge::ProtocolError&) {
      // Unusable length prefix: the stream is dropped.
    } catch (const std::exception& e) {
      fail(st, std::string("case ") + std::to_string(c) + ": " + e.what());
    }
  }
  return st;
}

FuzzStats fuzz_bundles(std::uint64_t seed, std::size_t cases, const model::Model& valid_model) {
  core::Rng rng(seed);
  FuzzStats st;
  const Bytes base = edge::serialize(valid_model);
  auto reseal = [](Bytes& b) {
    if (b.size() < 4) return;
    const std::uint32_t crc = edge::crc32(std::span(b).first(b.size() - 4));
    for (int k = 0; k < 4; ++k) b[b.size() - 4 + k] = static_cast<std::uint8_t>(crc >> (8 * k));
  };
  for (std::size_t c = 0; c < cases; ++c) {
    ++st.cases;
    Bytes b = base;
    switch (rng() % 6) {
      case 0:
        for (int k = 1 + static_cast<int>(rng() % 4); k > 0; --k) b[rng() % b.size()] ^= 1 + rng() % 255;
        break;
      case 1: b.resize(rng() % b.size()); break;
      case 2: {
        auto extra = random_bytes(1 + rng() % 16, rng);
        b.insert(b.end(), extra.begin(), extra.end());
        break;
      }
      case 3:
        b[7 + rng() % (b.size() - 11)] ^= 1 + rng() % 255;
        reseal(b);
        break;
      case 4: {
        // Overwrite one header word with a random, often huge, value.
        const std::size_t off = 7 + 4 * (rng() % 16);
        const std::uint32_t v = rng() % 2 ? static_cast<std::uint32_t>(rng()) : static_cast<std::uint32_t>(rng() % 8);
        for (int k = 0; k < 4; ++k) b[off + k] = static_cast<std::uint8_t>(v >> (8 * k));
        reseal(b);
        break;
      }
      default:
        b = random_bytes(rng() % 96, rng);
        if (rng() % 2 && b.size() >= 7) {
          b[0] = 'W', b[1] = 'E', b[2] = 'C', b[3] = 'B', b[4] = 1, b[5] = 0;
        }
        reseal(b);
    }
    try {
      auto m = edge::deserialize(b);
      ++st.bundles_accepted;
      if (edge::serialize(m) != b) fail(st, "accepted bundle does not round-trip");
    } catch (const edge::BundleError&) {
      ++st.bundles_rejected;
    } catch (const std::exception& e) {
      fail(st, std::string("case ") + std::to_string(c) + ": " + e.what());
    }
  }
  return st;
}

}  // namespace wecar::testing
