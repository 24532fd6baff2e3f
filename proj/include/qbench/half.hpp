#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <vector>

#include "qbench/tensor.hpp"

namespace qbench {

// IEEE 754 binary16 bit pattern: 1 sign, 5 exponent, 10 mantissa bits.
struct Half {
  std::uint16_t bits = 0;

  constexpr bool is_nan() const noexcept { return (bits & 0x7C00u) == 0x7C00u && (bits & 0x03FFu) != 0; }
  constexpr bool is_inf() const noexcept { return (bits & 0x7FFFu) == 0x7C00u; }
  constexpr bool is_finite() const noexcept { return (bits & 0x7C00u) != 0x7C00u; }

  friend constexpr bool operator==(Half a, Half b) = default;
};

inline constexpr float kHalfMaxFinite = 65504.0f;

// Round-to-nearest-even narrowing. Overflow goes to +-inf, NaN becomes a
// quiet NaN with the input sign.
inline Half f32_to_f16(float x) noexcept {
  const std::uint32_t f = std::bit_cast<std::uint32_t>(x);
  const auto sign = static_cast<std::uint16_t>((f >> 16) & 0x8000u);
  const std::uint32_t exp = (f >> 23) & 0xFFu;
  std::uint32_t man = f & 0x7FFFFFu;

  if (exp == 0xFFu) {
    if (man != 0) return Half{static_cast<std::uint16_t>(sign | 0x7E00u)};
    return Half{static_cast<std::uint16_t>(sign | 0x7C00u)};
  }

  const int e = static_cast<int>(exp) - 127 + 15;
  if (e >= 31) return Half{static_cast<std::uint16_t>(sign | 0x7C00u)};

  if (e <= 0) {
    // Below 2^-25 everything rounds to zero (2^-25 itself ties to even zero).
    if (e < -10) return Half{sign};
    man |= 0x800000u;
    const auto shift = static_cast<std::uint32_t>(14 - e);
    std::uint32_t hm = man >> shift;
    const std::uint32_t rem = man & ((1u << shift) - 1u);
    const std::uint32_t halfway = 1u << (shift - 1u);
    if (rem > halfway || (rem == halfway && (hm & 1u))) ++hm;
    // A carry out of the mantissa lands on the smallest normal, which is correct.
    return Half{static_cast<std::uint16_t>(sign | hm)};
  }

  auto h = static_cast<std::uint16_t>(sign | (static_cast<std::uint32_t>(e) << 10) | (man >> 13));
  const std::uint32_t rem = man & 0x1FFFu;
  if (rem > 0x1000u || (rem == 0x1000u && (h & 1u))) ++h;  // may carry up to inf
  return Half{h};
}

// Exact widening; every binary16 value is representable in binary32.
inline float f16_to_f32(Half h) noexcept {
  const std::uint32_t sign = static_cast<std::uint32_t>(h.bits & 0x8000u) << 16;
  const std::uint32_t exp = (h.bits >> 10) & 0x1Fu;
  std::uint32_t man = h.bits & 0x3FFu;

  if (exp == 0) {
    if (man == 0) return std::bit_cast<float>(sign);
    // Subnormal: normalise into a binary32 normal.
    int e = -1;
    do {
      man <<= 1;
      ++e;
    } while ((man & 0x400u) == 0);
    man &= 0x3FFu;
    const std::uint32_t fexp = static_cast<std::uint32_t>(127 - 15 - e);
    return std::bit_cast<float>(sign | (fexp << 23) | (man << 13));
  }
  if (exp == 31) return std::bit_cast<float>(sign | 0x7F800000u | (man << 13));
  return std::bit_cast<float>(sign | ((exp + 127 - 15) << 23) | (man << 13));
}

// Snap a value to the nearest binary16 value at float precision.
inline float round_to_half(float x) noexcept { return f16_to_f32(f32_to_f16(x)); }

inline Tensor round_to_half(const Tensor& t) {
  return map(t, [](float v) { return round_to_half(v); });
}

inline std::vector<Half> to_half(const Tensor& t) {
  std::vector<Half> out;
  out.reserve(t.numel());
  for (float v : t.data()) out.push_back(f32_to_f16(v));
  return out;
}

inline Tensor from_half(const Shape& shape, const std::vector<Half>& h) {
  std::vector<float> v;
  v.reserve(h.size());
  for (Half x : h) v.push_back(f16_to_f32(x));
  return Tensor(shape, std::move(v));
}

}  // namespace qbench
