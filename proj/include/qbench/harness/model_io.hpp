#pragma once

#include <bit>
#include <charconv>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "qbench/awq.hpp"
#include "qbench/errors.hpp"
#include "qbench/half.hpp"
#include "qbench/int4.hpp"
#include "qbench/nn/graph.hpp"
#include "qbench/nn/quantized_model.hpp"
#include "qbench/quant.hpp"

// Model file layout:
//   "QNT1" | u16 version | u32 header length | header text | payload
// The header is line-oriented ASCII. Every `tensor` line declares the next
// payload record in order: f32 and f16 words, i8 bytes, or i4 nibbles packed
// two per byte (low nibble first). All integers and floats are little-endian.

namespace qbench {

inline constexpr char kModelMagic[4] = {'Q', 'N', 'T', '1'};
inline constexpr std::uint16_t kModelVersion = 1;
inline constexpr std::size_t kModelPreambleBytes = 10;

enum class DType { f32, f16, i8, i4 };

inline std::string_view to_string(DType d) {
  switch (d) {
    case DType::f32: return "f32";
    case DType::f16: return "f16";
    case DType::i8: return "i8";
    case DType::i4: return "i4";
  }
  return "?";
}

inline std::size_t payload_bytes(DType d, std::size_t count) {
  switch (d) {
    case DType::f32: return 4 * count;
    case DType::f16: return 2 * count;
    case DType::i8: return count;
    case DType::i4: return (count + 1) / 2;
  }
  return 0;
}

namespace detail {

template <typename T>
std::string shortest(T v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

class ByteWriter {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void bytes(std::string_view s) { out_.append(s); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : d_(data) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return d_.size() - pos_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) throw FormatError(std::string("truncated ") + what, pos_);
  }
  std::uint8_t u8() {
    need(1, "byte");
    return static_cast<std::uint8_t>(d_[pos_++]);
  }
  std::uint16_t u16() {
    need(2, "u16");
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(static_cast<std::uint8_t>(d_[pos_++]) << (8 * i));
    return v;
  }
  std::uint32_t u32() {
    need(4, "u32");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(d_[pos_++])) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    auto s = d_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::string_view d_;
  std::size_t pos_ = 0;
};

struct TensorRecord {
  std::string layer, role;
  DType dtype = DType::f32;
  Shape dims;
  std::size_t count = 0;
};

inline void write_header_tensor(std::ostringstream& h, const std::string& layer, std::string_view role, DType d,
                                const Shape& dims) {
  h << "tensor " << layer << ' ' << role << ' ' << to_string(d) << ' ' << shape_numel(dims);
  for (std::size_t v : dims) h << ' ' << v;
  h << '\n';
}

}  // namespace detail

// Serializes a quantized model. Layers store only what their bit-width needs:
// f32 for FP32, f16 for FP16, i8 weights with f32 scales for INT8, packed i4
// weights with block and channel scales for INT4. Non-quantizable layers use
// the plan's floating width.
inline std::string serialize(const QuantizedModel& m) {
  validate_graph(m.graph);
  if (m.payloads.size() != m.graph.layers.size()) throw UsageError("payload count differs from layer count");
  std::ostringstream h;
  std::vector<std::function<void(detail::ByteWriter&)>> writers;

  auto emit_float = [&](const std::string& layer, std::string_view role, const Tensor& t, BitWidth w) {
    const DType d = w == BitWidth::fp16 ? DType::f16 : DType::f32;
    detail::write_header_tensor(h, layer, role, d, t.shape());
    writers.push_back([&t, d](detail::ByteWriter& out) {
      for (float v : t.data()) {
        if (d == DType::f16)
          out.u16(f32_to_f16(v).bits);
        else
          out.f32(v);
      }
    });
  };
  auto emit_scales = [&](const std::string& layer, std::string_view role, const std::vector<float>& s) {
    detail::write_header_tensor(h, layer, role, DType::f32, {s.size()});
    writers.push_back([&s](detail::ByteWriter& out) {
      for (float v : s) out.f32(v);
    });
  };

  h << "input";
  for (std::size_t v : m.graph.input) h << ' ' << v;
  h << "\nplan " << to_string(m.plan.default_bits) << '\n';
  for (const auto& [name, bits] : m.plan.overrides) h << "override " << name << ' ' << to_string(bits) << '\n';

  for (std::size_t i = 0; i < m.graph.layers.size(); ++i) {
    const auto& l = m.graph.layers[i];
    const auto& p = m.payloads[i];
    h << "layer " << to_string(l.kind) << ' ' << l.name << ' ' << to_string(p.bits) << ' ' << l.kernel << ' '
      << l.stride << ' ' << l.pad << ' ' << detail::shortest(l.eps) << '\n';
    switch (p.bits) {
      case BitWidth::fp32:
      case BitWidth::fp16:
        for (auto [role, t] : {std::pair<std::string_view, const Tensor*>{"weight", &l.weight}, {"bias", &l.bias},
                               {"mean", &l.mean}, {"var", &l.var}, {"gamma", &l.gamma}, {"beta", &l.beta}})
          if (!t->empty()) emit_float(l.name, role, *t, p.bits);
        break;
      case BitWidth::int8: {
        if (!p.qweight || !p.act) throw UsageError("INT8 layer '" + l.name + "' lacks quantized data");
        const auto& q = *p.qweight;
        detail::write_header_tensor(h, l.name, "weight", DType::i8, q.shape);
        writers.push_back([&q](detail::ByteWriter& out) {
          for (std::int8_t v : std::get<std::vector<std::int8_t>>(q.payload)) out.u8(static_cast<std::uint8_t>(v));
        });
        emit_scales(l.name, "weight_scale", q.params.scales);
        emit_scales(l.name, "act_scale", p.act->scales);
        emit_float(l.name, "bias", l.bias, BitWidth::fp32);
        break;
      }
      case BitWidth::int4: {
        if (!p.qweight) throw UsageError("INT4 layer '" + l.name + "' lacks quantized data");
        const auto& q = *p.qweight;
        h << "awq " << l.name << ' ' << q.params.granularity.block_size << ' ' << detail::shortest(p.awq_alpha) << ' '
          << detail::shortest(p.awq_loss) << ' ' << (p.awq_unit_fallback ? 1 : 0) << '\n';
        detail::write_header_tensor(h, l.name, "weight", DType::i4, q.shape);
        writers.push_back([&q](detail::ByteWriter& out) {
          for (std::uint8_t b : std::get<PackedNibbles>(q.payload).bytes) out.u8(b);
        });
        emit_scales(l.name, "block_scale", q.params.scales);
        emit_scales(l.name, "channel_scale", p.channel_scales);
        emit_float(l.name, "bias", l.bias, BitWidth::fp32);
        break;
      }
    }
  }
  h << "end\n";

  const std::string header = h.str();
  detail::ByteWriter out;
  out.bytes(std::string_view(kModelMagic, 4));
  out.u16(kModelVersion);
  out.u32(static_cast<std::uint32_t>(header.size()));
  out.bytes(header);
  for (auto& w : writers) w(out);
  return out.take();
}

// Byte count of everything after the header.
inline std::size_t model_payload_bytes(std::string_view file) {
  detail::ByteReader r(file);
  r.take(4, "magic");
  r.u16();
  const std::uint32_t hlen = r.u32();
  r.need(hlen, "header");
  return file.size() - kModelPreambleBytes - hlen;
}

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && line[i] == ' ') ++i;
    const std::size_t j = line.find(' ', i);
    const std::size_t e = j == std::string_view::npos ? line.size() : j;
    if (e > i) out.push_back(line.substr(i, e - i));
    i = e;
  }
  return out;
}

template <typename T>
T parse_number(std::string_view s, std::size_t offset) {
  T v{};
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw FormatError("malformed number '" + std::string(s) + "'", offset);
  return v;
}

inline DType parse_dtype(std::string_view s, std::size_t offset) {
  if (s == "f32") return DType::f32;
  if (s == "f16") return DType::f16;
  if (s == "i8") return DType::i8;
  if (s == "i4") return DType::i4;
  throw FormatError("unknown dtype '" + std::string(s) + "'", offset);
}

struct ParsedLayer {
  LayerSpec spec;
  LayerPayload payload;
  std::size_t block_size = 0;
  std::vector<TensorRecord> tensors;
  std::vector<std::size_t> tensor_offsets;  // header offsets, for diagnostics
};

inline float read_value(ByteReader& r, DType d) {
  return d == DType::f16 ? f16_to_f32(Half{r.u16()}) : r.f32();
}

}  // namespace detail

inline QuantizedModel deserialize(std::string_view file) {
  detail::ByteReader r(file);
  if (r.remaining() < 4 || std::memcmp(file.data(), kModelMagic, 4) != 0) throw FormatError("bad magic", 0);
  r.take(4, "magic");
  const std::size_t version_at = r.offset();
  const std::uint16_t version = r.u16();
  if (version != kModelVersion) throw FormatError("unsupported model version " + std::to_string(version), version_at);
  const std::uint32_t hlen = r.u32();
  const std::size_t header_at = r.offset();
  const std::string_view header = r.take(hlen, "header");

  QuantizedModel m;
  std::vector<detail::ParsedLayer> layers;
  bool ended = false;
  std::size_t pos = 0;
  while (pos < header.size()) {
    const std::size_t nl = header.find('\n', pos);
    if (nl == std::string_view::npos) throw FormatError("unterminated header line", header_at + pos);
    const std::size_t at = header_at + pos;
    const auto f = detail::split_ws(header.substr(pos, nl - pos));
    pos = nl + 1;
    if (f.empty()) continue;
    if (ended) throw FormatError("header continues after 'end'", at);
    auto need_fields = [&](std::size_t n) {
      if (f.size() < n) throw FormatError("header line '" + std::string(f[0]) + "' has too few fields", at);
    };
    try {
      if (f[0] == "input") {
        need_fields(2);
        for (std::size_t i = 1; i < f.size(); ++i) m.graph.input.push_back(detail::parse_number<std::size_t>(f[i], at));
      } else if (f[0] == "plan") {
        need_fields(2);
        m.plan.default_bits = parse_bit_width(f[1]);
      } else if (f[0] == "override") {
        need_fields(3);
        m.plan.overrides[std::string(f[1])] = parse_bit_width(f[2]);
      } else if (f[0] == "layer") {
        need_fields(8);
        detail::ParsedLayer pl;
        pl.spec.kind = parse_layer_kind(f[1]);
        pl.spec.name = std::string(f[2]);
        pl.payload.bits = parse_bit_width(f[3]);
        pl.spec.kernel = detail::parse_number<std::size_t>(f[4], at);
        pl.spec.stride = detail::parse_number<std::size_t>(f[5], at);
        pl.spec.pad = detail::parse_number<std::size_t>(f[6], at);
        pl.spec.eps = detail::parse_number<float>(f[7], at);
        layers.push_back(std::move(pl));
      } else if (f[0] == "awq") {
        need_fields(6);
        if (layers.empty() || layers.back().spec.name != f[1]) throw FormatError("awq line out of place", at);
        auto& pl = layers.back();
        pl.block_size = detail::parse_number<std::size_t>(f[2], at);
        pl.payload.awq_alpha = detail::parse_number<double>(f[3], at);
        pl.payload.awq_loss = detail::parse_number<double>(f[4], at);
        pl.payload.awq_unit_fallback = f[5] == "1";
      } else if (f[0] == "tensor") {
        need_fields(6);
        if (layers.empty() || layers.back().spec.name != f[1]) throw FormatError("tensor line out of place", at);
        detail::TensorRecord t;
        t.layer = std::string(f[1]);
        t.role = std::string(f[2]);
        t.dtype = detail::parse_dtype(f[3], at);
        t.count = detail::parse_number<std::size_t>(f[4], at);
        for (std::size_t i = 5; i < f.size(); ++i) t.dims.push_back(detail::parse_number<std::size_t>(f[i], at));
        if (shape_numel(t.dims) != t.count) throw FormatError("tensor count disagrees with its dimensions", at);
        layers.back().tensors.push_back(std::move(t));
        layers.back().tensor_offsets.push_back(at);
      } else if (f[0] == "end") {
        ended = true;
      } else {
        throw FormatError("unknown header record '" + std::string(f[0]) + "'", at);
      }
    } catch (const FormatError&) {
      throw;
    } catch (const Error& e) {
      throw FormatError(e.what(), at);
    }
  }
  if (!ended) throw FormatError("header lacks 'end'", header_at + header.size());

  for (auto& pl : layers) {
    LayerSpec& l = pl.spec;
    LayerPayload& p = pl.payload;
    std::optional<std::vector<std::int8_t>> i8;
    std::optional<PackedNibbles> i4;
    Shape qshape;
    std::vector<float> wscale, ascale;
    for (std::size_t k = 0; k < pl.tensors.size(); ++k) {
      const auto& t = pl.tensors[k];
      const std::size_t hat = pl.tensor_offsets[k];
      const std::size_t data_at = r.offset();
      r.need(payload_bytes(t.dtype, t.count), ("payload of " + t.layer + "." + t.role).c_str());
      auto expect = [&](bool ok) {
        if (!ok) throw FormatError("unexpected " + std::string(to_string(t.dtype)) + " tensor '" + t.role +
                                       "' for " + std::string(to_string(p.bits)) + " layer '" + l.name + "'",
                                   hat);
      };
      if (t.dtype == DType::i8) {
        expect(t.role == "weight" && p.bits == BitWidth::int8);
        std::vector<std::int8_t> v(t.count);
        for (auto& x : v) x = static_cast<std::int8_t>(r.u8());
        i8 = std::move(v);
        qshape = t.dims;
        continue;
      }
      if (t.dtype == DType::i4) {
        expect(t.role == "weight" && p.bits == BitWidth::int4);
        PackedNibbles pn;
        pn.count = t.count;
        const auto raw = r.take(payload_bytes(DType::i4, t.count), "nibbles");
        pn.bytes.assign(raw.begin(), raw.end());
        if (t.count % 2 && (pn.bytes.back() & 0xF0))
          throw FormatError("nonzero padding nibble", data_at + pn.bytes.size() - 1);
        i4 = std::move(pn);
        qshape = t.dims;
        continue;
      }
      const bool quant_layer = is_integer(p.bits);
      expect(quant_layer ? t.dtype == DType::f32 : (t.dtype == DType::f16) == (p.bits == BitWidth::fp16));
      std::vector<float> v(t.count);
      for (auto& x : v) x = detail::read_value(r, t.dtype);
      if (t.role == "weight_scale" || t.role == "block_scale") {
        expect(quant_layer);
        wscale = std::move(v);
      } else if (t.role == "act_scale") {
        expect(p.bits == BitWidth::int8);
        ascale = std::move(v);
      } else if (t.role == "channel_scale") {
        expect(p.bits == BitWidth::int4);
        p.channel_scales = std::move(v);
      } else {
        Tensor tensor;
        try {
          tensor = Tensor(t.dims, std::move(v));
        } catch (const Error& e) {
          throw FormatError(e.what(), hat);
        }
        if (t.role == "weight") l.weight = std::move(tensor);
        else if (t.role == "bias") l.bias = std::move(tensor);
        else if (t.role == "mean") l.mean = std::move(tensor);
        else if (t.role == "var") l.var = std::move(tensor);
        else if (t.role == "gamma") l.gamma = std::move(tensor);
        else if (t.role == "beta") l.beta = std::move(tensor);
        else throw FormatError("unknown tensor role '" + t.role + "'", hat);
      }
    }

    const std::size_t layer_at = pl.tensor_offsets.empty() ? header_at : pl.tensor_offsets.front();
    try {
      if (p.bits == BitWidth::int8) {
        if (!i8 || ascale.size() != 1) throw FormatError("INT8 layer '" + l.name + "' is incomplete", layer_at);
        QuantizedTensor q{{BitWidth::int8, Granularity::per_axis(0), std::move(wscale)}, qshape, std::move(*i8)};
        l.weight = dequantize(q);
        p.qweight = std::move(q);
        p.act = QuantParams{BitWidth::int8, Granularity::per_tensor(), std::move(ascale)};
      } else if (p.bits == BitWidth::int4) {
        if (!i4 || pl.block_size == 0) throw FormatError("INT4 layer '" + l.name + "' is incomplete", layer_at);
        QuantizedTensor q{{BitWidth::int4, Granularity::block(pl.block_size), std::move(wscale)}, qshape,
                          std::move(*i4)};
        const Tensor w = dequantize(q);
        if (p.channel_scales.size() != w.numel() / w.dim(0))
          throw FormatError("INT4 layer '" + l.name + "' channel scale count mismatch", layer_at);
        l.weight = detail::scale_columns(w, p.channel_scales, true);
        p.qweight = std::move(q);
      }
    } catch (const FormatError&) {
      throw;
    } catch (const Error& e) {
      throw FormatError(e.what(), layer_at);
    }
    m.graph.layers.push_back(std::move(l));
    m.payloads.push_back(std::move(p));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after payload", r.offset());

  try {
    validate_graph(m.graph);
    m.plan.validate(m.graph);
    for (std::size_t i = 0; i < m.graph.layers.size(); ++i)
      if (m.plan.for_layer(m.graph.layers[i]) != m.payloads[i].bits)
        throw UsageError("layer '" + m.graph.layers[i].name + "' bit-width disagrees with the plan");
  } catch (const Error& e) {
    throw FormatError(std::string("inconsistent model: ") + e.what(), header_at);
  }
  return m;
}

inline void save_model(const QuantizedModel& m, const std::string& path) {
  const std::string bytes = serialize(m);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("failed writing '" + path + "'");
}

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "'");
  return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

inline QuantizedModel load_model(const std::string& path) { return deserialize(read_file(path)); }

}  // namespace qbench
