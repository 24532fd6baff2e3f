#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qbench/awq.hpp"
#include "qbench/errors.hpp"
#include "qbench/half.hpp"
#include "qbench/nn/graph.hpp"
#include "qbench/nn/kernels.hpp"
#include "qbench/quant.hpp"
#include "qbench/tensor.hpp"

namespace qbench {

// Manual per-layer bit-width assignment. Only conv, depthwise and dense layers
// take an integer width; everything else runs at the plan's floating width.
struct PrecisionPlan {
  BitWidth default_bits = BitWidth::fp32;
  std::map<std::string, BitWidth> overrides;

  BitWidth floating_width() const { return default_bits == BitWidth::fp16 ? BitWidth::fp16 : BitWidth::fp32; }

  BitWidth for_layer(const LayerSpec& l) const {
    if (!is_quantizable(l.kind)) return floating_width();
    auto it = overrides.find(l.name);
    return it == overrides.end() ? default_bits : it->second;
  }

  void validate(const ModelGraph& g) const {
    for (const auto& [name, bits] : overrides) {
      const LayerSpec* l = g.find(name);
      if (!l) throw UsageError("precision override names unknown layer '" + name + "'");
      if (!is_quantizable(l->kind) && is_integer(bits))
        throw UsageError("layer '" + name + "' cannot be integer-quantized");
    }
  }

  static PrecisionPlan uniform(BitWidth b) { return PrecisionPlan{b, {}}; }

  friend bool operator==(const PrecisionPlan&, const PrecisionPlan&) = default;
};

// Calibration of a model: per-tensor input amax and per-output-channel weight
// amax of every quantizable layer.
struct ModelCalibration {
  CalibrationStats activations;
  CalibrationStats weights;
  std::size_t samples = 0;
};

inline ModelCalibration calibrate_model(const ModelGraph& g, std::span<const Tensor> images) {
  if (images.empty()) throw UsageError("calibration batch is empty");
  ModelCalibration cal;
  for (const auto& l : g.layers)
    if (is_quantizable(l.kind)) cal.weights.observe(l.name, l.weight, Granularity::per_axis(0));
  for (const auto& img : images) {
    const auto acts = forward_trace(g, img);
    for (std::size_t i = 0; i < g.layers.size(); ++i)
      if (is_quantizable(g.layers[i].kind)) cal.activations.observe(g.layers[i].name, acts[i], Granularity::per_tensor());
    ++cal.samples;
  }
  return cal;
}

// Columns of the layer's receptive fields, laid out to match the flattened
// weight rows: (in*k*k, positions) for conv and dense. A depthwise layer's
// rows only see their own channel, so its columns are the (k*k) patches of
// every channel stacked side by side.
inline Tensor im2col(const Tensor& input, const LayerSpec& l) {
  if (l.kind == LayerKind::dense) return input.reshaped({input.numel(), 1});
  if (l.kind != LayerKind::conv2d && l.kind != LayerKind::depthwise_conv2d)
    throw UsageError("im2col: '" + l.name + "' is not a convolution");
  const std::size_t groups = detail::groups_for(l, input.dim(0));
  const auto g = ConvGeometry::make(input.shape(), l.out_channels(), l.kernel, l.stride, l.pad, groups);
  const std::size_t k = g.kernel, positions = g.out_h * g.out_w;
  const bool dw = l.kind == LayerKind::depthwise_conv2d;
  const std::size_t rows = dw ? k * k : g.in_c * k * k;
  const std::size_t cols = dw ? g.in_c * positions : positions;
  std::vector<float> out(rows * cols, 0.0f);
  auto x = input.data();
  for (std::size_t c = 0; c < g.in_c; ++c)
    for (std::size_t kh = 0; kh < k; ++kh)
      for (std::size_t kw = 0; kw < k; ++kw) {
        const std::size_t row = dw ? kh * k + kw : (c * k + kh) * k + kw;
        const std::size_t col0 = dw ? c * positions : 0;
        for (std::size_t oy = 0; oy < g.out_h; ++oy)
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + kh) - static_cast<std::ptrdiff_t>(g.pad);
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kw) - static_cast<std::ptrdiff_t>(g.pad);
            if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h) ||
                ix >= static_cast<std::ptrdiff_t>(g.in_w))
              continue;
            out[row * cols + col0 + oy * g.out_w + ox] =
                x[(c * g.in_h + static_cast<std::size_t>(iy)) * g.in_w + static_cast<std::size_t>(ix)];
          }
      }
  return Tensor({rows, cols}, std::move(out));
}

// Calibration activations for AWQ, keyed by layer name: (fan_in, samples),
// with each image's columns subsampled at a fixed stride so the total stays
// near max_columns.
using LayerInputs = std::map<std::string, Tensor>;

inline LayerInputs collect_layer_inputs(const ModelGraph& g, std::span<const Tensor> images,
                                        std::size_t max_columns = 4096) {
  if (images.empty()) throw UsageError("AWQ calibration set is empty");
  std::map<std::string, std::vector<std::vector<float>>> rows;
  std::map<std::string, std::size_t> fan_in;
  for (const auto& img : images) {
    const auto acts = forward_trace(g, img);
    for (std::size_t i = 0; i < g.layers.size(); ++i) {
      const auto& l = g.layers[i];
      if (!is_quantizable(l.kind)) continue;
      const Tensor cols = im2col(acts[i], l);
      const std::size_t r = cols.dim(0), c = cols.dim(1);
      const std::size_t per_image = std::max<std::size_t>(1, (max_columns + images.size() - 1) / images.size());
      const std::size_t stride = std::max<std::size_t>(1, (c + per_image - 1) / per_image);
      auto& dst = rows[l.name];
      if (dst.empty()) dst.resize(r);
      fan_in[l.name] = r;
      for (std::size_t row = 0; row < r; ++row)
        for (std::size_t col = 0; col < c; col += stride) dst[row].push_back(cols[row * c + col]);
    }
  }
  LayerInputs out;
  for (auto& [name, rv] : rows) {
    const std::size_t r = fan_in[name], c = rv[0].size();
    std::vector<float> flat;
    flat.reserve(r * c);
    for (auto& row : rv) flat.insert(flat.end(), row.begin(), row.end());
    out.emplace(name, Tensor({r, c}, std::move(flat)));
  }
  return out;
}

struct LayerPayload {
  BitWidth bits = BitWidth::fp32;
  std::optional<QuantizedTensor> qweight;  // INT8 per output channel, INT4 block-wise
  std::optional<QuantParams> act;          // INT8 per-tensor input quantization
  std::vector<float> channel_scales;       // INT4 activation-aware scales
  double awq_alpha = 0.0;
  double awq_loss = 0.0;
  bool awq_unit_fallback = false;

  friend bool operator==(const LayerPayload&, const LayerPayload&) = default;
};

// A graph with a precision plan applied. `graph` carries the floating weights
// each layer computes with (binary16 fixed points for FP16, dequantized and
// unscaled weights for INT4, dequantized weights for INT8); `payloads` carry
// the integer data. Immutable once built, so concurrent forward calls are safe.
class QuantizedModel {
 public:
  ModelGraph graph;
  PrecisionPlan plan;
  std::vector<LayerPayload> payloads;

  float forward(const Tensor& image) const { return run(image, false); }

  // INT8 layers evaluated as float convolutions over fake-quantized inputs and
  // weights instead of the integer kernel. Reference path for testing.
  float forward_simulated(const Tensor& image) const { return run(image, true); }

  friend bool operator==(const QuantizedModel&, const QuantizedModel&) = default;

 private:
  float run(const Tensor& image, bool simulate) const {
    if (image.shape() != graph.input)
      throw ShapeError("input image " + shape_string(image.shape()) + " does not match model " +
                       shape_string(graph.input));
    Tensor x = image;
    for (std::size_t i = 0; i < graph.layers.size(); ++i) {
      const auto& l = graph.layers[i];
      const auto& p = payloads[i];
      switch (p.bits) {
        case BitWidth::fp32:
        case BitWidth::int4:
          x = apply_layer(l, x);
          break;
        case BitWidth::fp16:
          x = round_to_half(apply_layer(l, round_to_half(x)));
          break;
        case BitWidth::int8: {
          const QuantizedTensor qx = quantize(x, *p.act);
          if (simulate) {
            x = apply_layer(l, dequantize(qx));
            break;
          }
          const std::size_t groups = detail::groups_for(l, x.dim(0));
          if (l.kind == LayerKind::dense) {
            QuantizedTensor qx1 = qx, qw = *p.qweight;
            qx1.shape = {x.numel(), 1, 1};
            qw.shape = {qw.shape[0], qw.shape[1], 1, 1};
            x = conv2d_int8(qx1, qw, l.bias, 1, 0, 1);
          } else {
            x = conv2d_int8(qx, *p.qweight, l.bias, l.stride, l.pad, groups);
          }
          break;
        }
      }
    }
    return x[0];
  }
};

namespace detail {

inline void narrow_layer_to_half(LayerSpec& l) {
  for (Tensor* t : {&l.weight, &l.bias, &l.mean, &l.var, &l.gamma, &l.beta})
    if (!t->empty()) *t = round_to_half(*t);
}

inline void check_int8_fan_in(const LayerSpec& l) {
  const std::size_t fan_in = l.weight.numel() / l.weight.dim(0);
  if (!int8_accumulator_safe(fan_in))
    throw UsageError("layer '" + l.name + "' fan-in " + std::to_string(fan_in) +
                     " can overflow the 32-bit INT8 accumulator");
}

}  // namespace detail

// Identity plan: wraps a float graph without any calibration.
inline QuantizedModel fp32_model(const ModelGraph& g) {
  validate_graph(g);
  QuantizedModel m;
  m.graph = g;
  m.plan = PrecisionPlan::uniform(BitWidth::fp32);
  m.payloads.assign(g.layers.size(), LayerPayload{});
  return m;
}

inline QuantizedModel quantize_model(const ModelGraph& g, const ModelCalibration& cal, const PrecisionPlan& plan,
                                     const AwqConfig& awq_cfg = {}, const LayerInputs& awq_inputs = {}) {
  validate_graph(g);
  plan.validate(g);
  QuantizedModel m;
  m.graph = g;
  m.plan = plan;
  m.payloads.resize(g.layers.size());
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    LayerSpec& l = m.graph.layers[i];
    LayerPayload& p = m.payloads[i];
    p.bits = plan.for_layer(l);
    switch (p.bits) {
      case BitWidth::fp32:
        break;
      case BitWidth::fp16:
        detail::narrow_layer_to_half(l);
        break;
      case BitWidth::int8: {
        if (!cal.activations.contains(l.name) || !cal.weights.contains(l.name))
          throw UsageError("missing calibration statistics for INT8 layer '" + l.name + "'");
        detail::check_int8_fan_in(l);
        const auto wp = params_from_amax(cal.weights.at(l.name), BitWidth::int8, Granularity::per_axis(0));
        p.qweight = quantize(l.weight, wp);
        p.act = params_from_amax(cal.activations.at(l.name), BitWidth::int8, Granularity::per_tensor());
        l.weight = dequantize(*p.qweight);
        break;
      }
      case BitWidth::int4: {
        auto it = awq_inputs.find(l.name);
        if (it == awq_inputs.end())
          throw UsageError("missing AWQ calibration activations for INT4 layer '" + l.name + "'");
        auto r = awq_search(l.weight, it->second, awq_cfg);
        l.weight = r.effective_weights();
        p.qweight = std::move(r.qweights);
        p.channel_scales = std::move(r.channel_scales);
        p.awq_alpha = r.alpha_star;
        p.awq_loss = r.loss_at_alpha;
        p.awq_unit_fallback = r.unit_fallback;
        break;
      }
    }
  }
  return m;
}

// One row of the per-layer quantization summary.
struct LayerSummaryRow {
  std::string name;
  BitWidth bits = BitWidth::fp32;
  std::string method;
  float amax_min = 0.0f;
  float amax_max = 0.0f;
};

// Weight amax range of every integer layer, recovered from its stored scales
// (scale * qmax per slice).
inline std::vector<LayerSummaryRow> layer_summary(const QuantizedModel& m) {
  std::vector<LayerSummaryRow> rows;
  for (std::size_t i = 0; i < m.graph.layers.size(); ++i) {
    const auto& p = m.payloads[i];
    if (!is_integer(p.bits) || !p.qweight) continue;
    const auto& sc = p.qweight->params.scales;
    const float qm = static_cast<float>(qmax(p.bits));
    auto [lo, hi] = std::minmax_element(sc.begin(), sc.end());
    // Zero slices carry the float-min sentinel scale; report them as 0.
    auto amax_of = [&](float s) { return s <= std::numeric_limits<float>::min() ? 0.0f : s * qm; };
    rows.push_back({m.graph.layers[i].name, p.bits, std::string(method_name(p.qweight->params.granularity)),
                    amax_of(*lo), amax_of(*hi)});
  }
  return rows;
}

// Per-layer [min, max] of the calibrated per-channel weight amax.
inline std::vector<LayerSummaryRow> calibration_summary(const ModelGraph& g, const ModelCalibration& cal) {
  std::vector<LayerSummaryRow> rows;
  for (const auto& l : g.layers) {
    if (!cal.weights.contains(l.name)) continue;
    auto [lo, hi] = cal.weights.range(l.name);
    rows.push_back({l.name, BitWidth::int8, "Per-axis", lo, hi});
  }
  return rows;
}

}  // namespace qbench
