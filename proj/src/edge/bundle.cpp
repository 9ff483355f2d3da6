#include "wecar/edge/bundle.hpp"

#include <zlib.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <limits>

namespace wecar::edge {

static_assert(std::endian::native == std::endian::little, "bundle code assumes little-endian");

std::string to_string(BundleErrc c) {
  switch (c) {
    case BundleErrc::BadMagic: return "bad magic";
    case BundleErrc::UnsupportedVersion: return "unsupported version";
    case BundleErrc::CrcMismatch: return "CRC mismatch";
    case BundleErrc::Truncated: return "truncated";
    case BundleErrc::Malformed: return "malformed";
  }
  return "?";
}

BundleError::BundleError(BundleErrc code, const std::string& what)
    : Error("bundle " + to_string(code) + ": " + what), code_(code) {}

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong c = ::crc32(0L, Z_NULL, 0);
  std::size_t off = 0;
  while (off < bytes.size()) {
    const auto chunk = static_cast<uInt>(
        std::min<std::size_t>(bytes.size() - off, std::numeric_limits<uInt>::max()));
    c = ::crc32(c, bytes.data() + off, chunk);
    off += chunk;
  }
  return static_cast<std::uint32_t>(c);
}

namespace {

constexpr char kMagic[4] = {'W', 'E', 'C', 'B'};
constexpr std::uint32_t kMaxCount = 1u << 20;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) { bytes(&v, 2); }
  void u32(std::size_t v) {
    if (v > std::numeric_limits<std::uint32_t>::max()) {
      throw BundleError(BundleErrc::Malformed, "field exceeds u32");
    }
    const auto w = static_cast<std::uint32_t>(v);
    bytes(&w, 4);
  }
  void f32(double v) {
    const float f = static_cast<float>(v);
    bytes(&f, 4);
  }
  std::vector<std::uint8_t>& out() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  void need(std::size_t n, const char* what) const {
    if (b_.size() - pos_ < n) {
      throw BundleError(BundleErrc::Truncated, std::string("ends inside ") + what);
    }
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return b_[pos_++];
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v;
    std::memcpy(&v, b_.data() + pos_, 2);
    pos_ += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v;
    std::memcpy(&v, b_.data() + pos_, 4);
    pos_ += 4;
    return v;
  }
  std::uint32_t count(const char* what) {
    const auto v = u32(what);
    if (v > kMaxCount) throw BundleError(BundleErrc::Malformed, std::string(what) + " too large");
    return v;
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  float f32(const char* what) {
    need(4, what);
    float f;
    std::memcpy(&f, b_.data() + pos_, 4);
    pos_ += 4;
    return f;
  }
  void skip(std::size_t n, const char* what) {
    need(n, what);
    pos_ += n;
  }
  std::size_t pos() const { return pos_; }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

struct Meta {
  model::ModelKind kind = model::ModelKind::Full;
  model::ModelConfig config;
  std::vector<std::size_t> block_ids;
  std::size_t prefix_rows = 0;
  std::size_t classes = 0;
  std::size_t task_index = 0;
};

Meta read_meta(Reader& r) {
  Meta m;
  const auto kind = r.u8("kind");
  if (kind > 1) throw BundleError(BundleErrc::Malformed, "unknown model kind");
  m.kind = static_cast<model::ModelKind>(kind);
  m.config.n = r.count("n");
  m.config.d = r.count("d");
  m.config.heads = r.count("heads");
  m.config.ranges = r.count("ranges");
  m.config.prefix_len = r.count("prefix_len");
  const auto blocks = r.count("block count");
  for (std::uint32_t i = 0; i < blocks; ++i) m.block_ids.push_back(r.u32("block id"));
  m.prefix_rows = r.count("prefix rows");
  const auto layers = r.count("mlp layer count");
  m.config.mlp_widths.clear();
  for (std::uint32_t i = 0; i < layers; ++i) m.config.mlp_widths.push_back(r.count("mlp width"));
  m.classes = r.count("classes");
  m.task_index = r.u32("task index");
  return m;
}

std::uint64_t expected_elements(const Meta& m) {
  const std::uint64_t d = m.config.d, g = m.config.ranges, c = m.classes;
  std::uint64_t total = 2 * g + g * d + 4 * d * d + 2 * m.prefix_rows * d;
  std::uint64_t in = d;
  for (std::uint64_t w : m.config.mlp_widths) {
    total += in * w + w;
    in = w;
  }
  return total + c * in + 2 * c;
}

}  // namespace

std::vector<std::uint8_t> serialize(const model::Model& m) {
  Writer w;
  w.bytes(kMagic, 4);
  w.u16(kBundleVersion);
  w.u8(static_cast<std::uint8_t>(m.kind));
  w.u32(m.config.n);
  w.u32(m.config.d);
  w.u32(m.config.heads);
  w.u32(m.encoding.ranges());
  w.u32(m.config.prefix_len);
  w.u32(m.prefixes.size());
  for (const auto& b : m.prefixes.blocks()) w.u32(b.task_id);
  w.u32(m.prefixes.total_rows());
  w.u32(m.mlp.size());
  for (const auto& l : m.mlp) w.u32(l.out_dim());
  w.u32(m.classifier.size());
  w.u32(m.task_index);

  const auto params = m.parameters();
  w.u32(params.size() + 1);
  auto tensor = [&](const std::string& name, const core::Tensor2& t) {
    w.u32(name.size());
    w.bytes(name.data(), name.size());
    w.u32(t.rows());
    w.u32(t.cols());
    for (double v : t.data()) w.f32(v);
  };
  for (const auto* p : params) tensor(p->name, p->value);
  core::Tensor2 ids(1, m.classifier.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<double>(m.classifier.class_ids[i]);
  tensor("classifier.class_ids", ids);

  const auto crc = crc32(w.out());
  w.u32(crc);
  return std::move(w.out());
}

model::Model deserialize(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.need(4, "magic");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw BundleError(BundleErrc::BadMagic, "not WECB");
  r.skip(4, "magic");
  const auto version = r.u16("version");
  if (version != kBundleVersion) {
    throw BundleError(BundleErrc::UnsupportedVersion, "version " + std::to_string(version));
  }
  Meta meta = read_meta(r);

  // Walk the tensor table to find where the checksum must sit.
  const std::size_t table_start = r.pos();
  std::uint64_t elements = 0;
  {
    const auto count = r.count("tensor count");
    for (std::uint32_t i = 0; i < count; ++i) {
      const auto len = r.count("name length");
      r.skip(len, "tensor name");
      const std::uint64_t rows = r.count("rows"), cols = r.count("cols");
      if (rows * cols > kMaxCount) throw BundleError(BundleErrc::Malformed, "tensor too large");
      r.skip(static_cast<std::size_t>(rows * cols) * 4, "tensor data");
      elements += rows * cols;
    }
  }
  const std::size_t body = r.pos();
  r.need(4, "checksum");
  if (bytes.size() != body + 4) throw BundleError(BundleErrc::Malformed, "trailing bytes");
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + body, 4);
  if (stored != crc32(bytes.first(body))) throw BundleError(BundleErrc::CrcMismatch, "checksum");
  // Bounds every allocation below by the size of the input.
  if (expected_elements(meta) != elements) {
    throw BundleError(BundleErrc::Malformed, "tensor sizes do not match metadata");
  }

  model::Model m;
  try {
    meta.config.validate();
    core::Rng rng(0);
    m = model::Model::create(meta.kind, meta.config, rng);
  } catch (const Error& e) {
    throw BundleError(BundleErrc::Malformed, e.what());
  }
  const std::size_t p = meta.config.prefix_len, d = meta.config.d;
  std::size_t rows_total = 0;
  for (auto id : meta.block_ids) {
    std::size_t rows = p;
    if (meta.kind == model::ModelKind::Light) rows = meta.prefix_rows;
    rows_total += rows;
    auto block = model::make_prefix_block(id, core::Tensor2(rows, d), core::Tensor2(rows, d),
                                          meta.config.heads);
    try {
      m.prefixes.push(std::move(block));
      m.prefixes.freeze_and_accumulate(id);
    } catch (const Error& e) {
      throw BundleError(BundleErrc::Malformed, e.what());
    }
  }
  if (rows_total != meta.prefix_rows) {
    throw BundleError(BundleErrc::Malformed, "prefix rows disagree with block layout");
  }
  m.classifier.weight.value = core::Tensor2(meta.classes, m.classifier.width());
  m.classifier.bias.value = core::Tensor2(1, meta.classes);
  m.classifier.class_ids.assign(meta.classes, 0);
  m.task_index = meta.task_index;
  m.encoding.set_trainable(false);
  m.attention.freeze();

  Reader t(bytes.subspan(table_start, body - table_start));
  const auto params = m.parameters();
  if (t.u32("tensor count") != params.size() + 1) {
    throw BundleError(BundleErrc::Malformed, "tensor count does not match metadata");
  }
  auto read_tensor = [&](const std::string& name, std::size_t rows, std::size_t cols) {
    const auto got = t.str(t.u32("name length"), "tensor name");
    const auto tr = t.u32("rows"), tc = t.u32("cols");
    if (got != name || tr != rows || tc != cols) {
      throw BundleError(BundleErrc::Malformed, "expected " + name + " " + std::to_string(rows) +
                                                   "x" + std::to_string(cols) + ", found " + got +
                                                   " " + std::to_string(tr) + "x" +
                                                   std::to_string(tc));
    }
    core::Tensor2 out(rows, cols);
    for (auto& v : out.data()) v = static_cast<double>(t.f32("tensor data"));
    return out;
  };
  for (auto* prm : params) {
    prm->value = read_tensor(prm->name, prm->value.rows(), prm->value.cols());
    prm->grad = core::Tensor2(prm->value.rows(), prm->value.cols());
    if (!prm->value.all_finite()) throw BundleError(BundleErrc::Malformed, prm->name + " not finite");
  }
  const auto ids = read_tensor("classifier.class_ids", 1, meta.classes);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const double v = ids[i];
    if (!(v >= 0.0 && v < 16777216.0) || v != std::floor(v)) {
      throw BundleError(BundleErrc::Malformed, "bad class id");
    }
    m.classifier.class_ids[i] = static_cast<std::size_t>(v);
    for (std::size_t j = 0; j < i; ++j) {
      if (m.classifier.class_ids[j] == m.classifier.class_ids[i]) {
        throw BundleError(BundleErrc::Malformed, "duplicate class id");
      }
    }
  }
  return m;
}

}  // namespace wecar::edge
