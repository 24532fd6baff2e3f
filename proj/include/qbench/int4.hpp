#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "qbench/errors.hpp"

namespace qbench {

// Two's-complement 4-bit values packed two per byte, low nibble first.
struct PackedNibbles {
  std::vector<std::uint8_t> bytes;
  std::size_t count = 0;

  std::int8_t at(std::size_t i) const {
    const std::uint8_t b = bytes[i / 2];
    const std::uint8_t nib = (i % 2 == 0) ? (b & 0x0Fu) : (b >> 4);
    return static_cast<std::int8_t>((nib & 0x08u) ? static_cast<int>(nib) - 16 : static_cast<int>(nib));
  }

  friend bool operator==(const PackedNibbles&, const PackedNibbles&) = default;
};

inline PackedNibbles pack_int4(std::span<const std::int8_t> values) {
  PackedNibbles p;
  p.count = values.size();
  p.bytes.assign((values.size() + 1) / 2, 0);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const int v = values[i];
    if (v < -8 || v > 7) throw RangeError("int4 value " + std::to_string(v) + " outside [-8, 7]", i);
    const auto nib = static_cast<std::uint8_t>(v & 0x0F);
    p.bytes[i / 2] |= (i % 2 == 0) ? nib : static_cast<std::uint8_t>(nib << 4);
  }
  return p;
}

inline std::vector<std::int8_t> unpack_int4(const PackedNibbles& p) {
  std::vector<std::int8_t> out(p.count);
  for (std::size_t i = 0; i < p.count; ++i) out[i] = p.at(i);
  return out;
}

}  // namespace qbench
