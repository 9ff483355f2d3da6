#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "wecar/core/errors.hpp"
#include "wecar/model/model.hpp"

namespace wecar::edge {

inline constexpr std::uint16_t kBundleVersion = 1;

enum class BundleErrc : std::uint8_t {
  BadMagic = 1,
  UnsupportedVersion = 2,
  CrcMismatch = 3,
  Truncated = 4,
  Malformed = 5,
};

std::string to_string(BundleErrc c);

class BundleError : public Error {
 public:
  BundleError(BundleErrc code, const std::string& what);
  BundleErrc code() const { return code_; }

 private:
  BundleErrc code_;
};

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

// Layout, little-endian:
//   "WECB" | u16 version | u8 kind
//   u32 n, d, heads, ranges, prefix_len, block count, block task ids...,
//       prefix rows total, mlp layer count, mlp widths..., classes seen,
//       task index
//   u32 tensor count, then per tensor: u32 name length, name, u32 rows,
//       u32 cols, rows*cols f32
//   u32 CRC32 of everything before it
// Tensors follow Model::parameters() order, then "classifier.class_ids".

std::vector<std::uint8_t> serialize(const model::Model& m);
/// Checks magic, version, layout length and CRC before building the model.
model::Model deserialize(std::span<const std::uint8_t> bytes);

}  // namespace wecar::edge
