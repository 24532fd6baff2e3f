#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "qbench/errors.hpp"
#include "qbench/int4.hpp"
#include "qbench/tensor.hpp"

namespace qbench {

enum class BitWidth { fp32, fp16, int8, int4 };

constexpr bool is_integer(BitWidth b) noexcept { return b == BitWidth::int8 || b == BitWidth::int4; }

constexpr int bit_count(BitWidth b) noexcept {
  switch (b) {
    case BitWidth::fp32: return 32;
    case BitWidth::fp16: return 16;
    case BitWidth::int8: return 8;
    case BitWidth::int4: return 4;
  }
  return 0;
}

// Largest magnitude of the symmetric integer grid, 2^(b-1) - 1.
constexpr int qmax(BitWidth b) noexcept { return is_integer(b) ? (1 << (bit_count(b) - 1)) - 1 : 0; }

inline std::string_view to_string(BitWidth b) noexcept {
  switch (b) {
    case BitWidth::fp32: return "FP32";
    case BitWidth::fp16: return "FP16";
    case BitWidth::int8: return "INT8";
    case BitWidth::int4: return "INT4";
  }
  return "?";
}

inline BitWidth parse_bit_width(std::string_view s) {
  std::string lower(s);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "fp32") return BitWidth::fp32;
  if (lower == "fp16") return BitWidth::fp16;
  if (lower == "int8") return BitWidth::int8;
  if (lower == "int4") return BitWidth::int4;
  throw UsageError("unknown bit-width '" + std::string(s) + "' (expected fp32|fp16|int8|int4)");
}

struct Granularity {
  enum class Kind { per_tensor, per_axis, block };

  Kind kind = Kind::per_tensor;
  std::size_t axis = 0;
  std::size_t block_size = 0;

  static Granularity per_tensor() { return {}; }
  static Granularity per_axis(std::size_t axis) { return {Kind::per_axis, axis, 0}; }
  // Blocks run along each axis-0 row of the flattened tensor; the last block of
  // a row may be partial.
  static Granularity block(std::size_t size) { return {Kind::block, 0, size}; }

  friend bool operator==(const Granularity&, const Granularity&) = default;
};

inline std::string_view method_name(const Granularity& g) {
  switch (g.kind) {
    case Granularity::Kind::per_tensor: return "Per-tensor";
    case Granularity::Kind::per_axis: return "Per-axis";
    case Granularity::Kind::block: return "Block-wise";
  }
  return "?";
}

// Maps a flat element index to the index of its quantization slice.
class SliceMap {
 public:
  SliceMap(const Shape& shape, const Granularity& g) : g_(g) {
    if (shape.empty()) throw ShapeError("cannot slice an empty tensor");
    const std::size_t n = shape_numel(shape);
    switch (g.kind) {
      case Granularity::Kind::per_tensor:
        count_ = 1;
        break;
      case Granularity::Kind::per_axis: {
        if (g.axis >= shape.size()) {
          throw ShapeError("per-axis granularity axis " + std::to_string(g.axis) + " out of range for shape " +
                           shape_string(shape));
        }
        extent_ = shape[g.axis];
        inner_ = 1;
        for (std::size_t d = g.axis + 1; d < shape.size(); ++d) inner_ *= shape[d];
        count_ = extent_;
        break;
      }
      case Granularity::Kind::block: {
        if (g.block_size == 0) throw ShapeError("block size must be positive");
        row_len_ = n / shape[0];
        blocks_per_row_ = (row_len_ + g.block_size - 1) / g.block_size;
        count_ = shape[0] * blocks_per_row_;
        break;
      }
    }
  }

  std::size_t count() const noexcept { return count_; }

  std::size_t operator()(std::size_t flat) const noexcept {
    switch (g_.kind) {
      case Granularity::Kind::per_tensor: return 0;
      case Granularity::Kind::per_axis: return (flat / inner_) % extent_;
      case Granularity::Kind::block: {
        const std::size_t row = flat / row_len_;
        return row * blocks_per_row_ + (flat % row_len_) / g_.block_size;
      }
    }
    return 0;
  }

 private:
  Granularity g_;
  std::size_t count_ = 1;
  std::size_t extent_ = 1, inner_ = 1;
  std::size_t row_len_ = 1, blocks_per_row_ = 1;
};

// Max |x| of every slice.
inline std::vector<float> calibrate_amax(const Tensor& t, const Granularity& g) {
  if (t.empty()) throw ShapeError("calibrate_amax: empty tensor");
  const SliceMap slices(t.shape(), g);
  std::vector<float> amax(slices.count(), 0.0f);
  auto d = t.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    float& m = amax[slices(i)];
    m = std::max(m, std::fabs(d[i]));
  }
  return amax;
}

// Per-slice amax keyed by name. Merging takes the elementwise max, so batches
// may be folded in any order.
class CalibrationStats {
 public:
  void record(const std::string& key, const std::vector<float>& amax) {
    auto [it, inserted] = table_.try_emplace(key, amax);
    if (inserted) return;
    if (it->second.size() != amax.size()) {
      throw ShapeError("calibration slice count mismatch for '" + key + "': " + std::to_string(it->second.size()) +
                       " vs " + std::to_string(amax.size()));
    }
    for (std::size_t i = 0; i < amax.size(); ++i) it->second[i] = std::max(it->second[i], amax[i]);
  }

  void observe(const std::string& key, const Tensor& t, const Granularity& g) { record(key, calibrate_amax(t, g)); }

  void merge(const CalibrationStats& other) {
    for (const auto& [k, v] : other.table_) record(k, v);
  }

  bool contains(const std::string& key) const { return table_.count(key) != 0; }

  const std::vector<float>& at(const std::string& key) const {
    auto it = table_.find(key);
    if (it == table_.end()) throw UsageError("no calibration statistics for '" + key + "'");
    return it->second;
  }

  std::pair<float, float> range(const std::string& key) const {
    const auto& v = at(key);
    auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    return {*lo, *hi};
  }

  const std::map<std::string, std::vector<float>>& entries() const noexcept { return table_; }

  friend bool operator==(const CalibrationStats&, const CalibrationStats&) = default;

 private:
  std::map<std::string, std::vector<float>> table_;
};

// amax / (2^(b-1) - 1), floored at the smallest normal float. A zero slice
// therefore keeps a positive scale and quantizes to zeros.
inline float scale_from_amax(float amax, BitWidth b) {
  if (!is_integer(b)) throw UsageError("scale_from_amax requires an integer bit-width");
  if (!(amax >= 0.0f) || !std::isfinite(amax)) throw NumericError("amax must be finite and non-negative");
  return std::max(amax / static_cast<float>(qmax(b)), std::numeric_limits<float>::min());
}

struct QuantParams {
  BitWidth bit_width = BitWidth::int8;
  Granularity granularity;
  std::vector<float> scales;

  friend bool operator==(const QuantParams&, const QuantParams&) = default;
};

inline QuantParams params_from_amax(const std::vector<float>& amax, BitWidth b, const Granularity& g) {
  QuantParams p{b, g, {}};
  p.scales.reserve(amax.size());
  for (float a : amax) p.scales.push_back(scale_from_amax(a, b));
  return p;
}

inline QuantParams calibrate_params(const Tensor& t, BitWidth b, const Granularity& g) {
  return params_from_amax(calibrate_amax(t, g), b, g);
}

struct QuantizedTensor {
  QuantParams params;
  Shape shape;
  std::variant<std::vector<std::int8_t>, PackedNibbles> payload;

  std::size_t numel() const { return shape_numel(shape); }

  std::vector<std::int8_t> values() const {
    if (const auto* v = std::get_if<std::vector<std::int8_t>>(&payload)) return *v;
    return unpack_int4(std::get<PackedNibbles>(payload));
  }

  friend bool operator==(const QuantizedTensor&, const QuantizedTensor&) = default;
};

namespace detail {

inline void check_params(const Shape& shape, const QuantParams& p, const SliceMap& slices) {
  if (!is_integer(p.bit_width)) throw UsageError("quantization requires INT8 or INT4");
  if (p.scales.size() != slices.count()) {
    throw ShapeError("expected " + std::to_string(slices.count()) + " scales for shape " + shape_string(shape) +
                     ", got " + std::to_string(p.scales.size()));
  }
  for (float s : p.scales)
    if (!(s > 0.0f) || !std::isfinite(s)) throw NumericError("quantization scales must be positive and finite");
}

// round-half-even(x / s) clamped to +-qmax. The quotient is formed in double
// so the only rounding is the final one.
inline std::int8_t quantize_value(float x, float s, int qm) noexcept {
  const double r = std::nearbyint(static_cast<double>(x) / static_cast<double>(s));
  return static_cast<std::int8_t>(std::clamp(r, static_cast<double>(-qm), static_cast<double>(qm)));
}

}  // namespace detail

inline QuantizedTensor quantize(const Tensor& t, const QuantParams& p) {
  const SliceMap slices(t.shape(), p.granularity);
  detail::check_params(t.shape(), p, slices);
  const int qm = qmax(p.bit_width);
  auto d = t.data();
  std::vector<std::int8_t> q(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!std::isfinite(d[i])) throw NumericError("cannot quantize non-finite value", i);
    q[i] = detail::quantize_value(d[i], p.scales[slices(i)], qm);
  }
  QuantizedTensor out{p, t.shape(), {}};
  if (p.bit_width == BitWidth::int4)
    out.payload = pack_int4(q);
  else
    out.payload = std::move(q);
  return out;
}

inline Tensor dequantize(const QuantizedTensor& q) {
  const SliceMap slices(q.shape, q.params.granularity);
  const auto vals = q.values();
  std::vector<float> out(vals.size());
  for (std::size_t i = 0; i < vals.size(); ++i) out[i] = static_cast<float>(vals[i]) * q.params.scales[slices(i)];
  return Tensor(q.shape, std::move(out));
}

inline Tensor fake_quant(const Tensor& t, const QuantParams& p) { return dequantize(quantize(t, p)); }

}  // namespace qbench
