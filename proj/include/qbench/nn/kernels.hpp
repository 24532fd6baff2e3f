#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <vector>

#include "qbench/errors.hpp"
#include "qbench/nn/graph.hpp"
#include "qbench/quant.hpp"
#include "qbench/tensor.hpp"

namespace qbench {

struct ConvGeometry {
  std::size_t in_c = 0, in_h = 0, in_w = 0;
  std::size_t out_c = 0, out_h = 0, out_w = 0;
  std::size_t kernel = 1, stride = 1, pad = 0, groups = 1;

  std::size_t in_per_group() const { return in_c / groups; }
  std::size_t out_per_group() const { return out_c / groups; }
  std::size_t fan_in() const { return in_per_group() * kernel * kernel; }
  std::size_t weight_size() const { return out_c * fan_in(); }

  static ConvGeometry make(const Shape& in, std::size_t out_c, std::size_t kernel, std::size_t stride,
                           std::size_t pad, std::size_t groups) {
    if (in.size() != 3) throw ShapeError("convolution expects CHW input, got " + shape_string(in));
    if (stride == 0) throw ShapeError("stride must be >= 1");
    if (groups == 0 || in[0] % groups != 0 || out_c % groups != 0)
      throw ShapeError("channel counts are not divisible by groups");
    ConvGeometry g;
    g.in_c = in[0];
    g.in_h = in[1];
    g.in_w = in[2];
    g.out_c = out_c;
    g.kernel = kernel;
    g.stride = stride;
    g.pad = pad;
    g.groups = groups;
    g.out_h = conv_out_extent(in[1], kernel, stride, pad);
    g.out_w = conv_out_extent(in[2], kernel, stride, pad);
    return g;
  }
};

namespace detail {

// Output columns whose input column ox*stride + kw - pad lies inside [0, in).
inline void valid_range(std::size_t in, std::size_t out, std::size_t k_off, std::size_t stride, std::size_t pad,
                        std::size_t& lo, std::size_t& hi) {
  const auto off = static_cast<std::ptrdiff_t>(k_off) - static_cast<std::ptrdiff_t>(pad);
  const auto s = static_cast<std::ptrdiff_t>(stride);
  std::ptrdiff_t l = off >= 0 ? 0 : (-off + s - 1) / s;
  std::ptrdiff_t h = (static_cast<std::ptrdiff_t>(in) - 1 - off);
  h = h < 0 ? -1 : h / s;
  h = std::min<std::ptrdiff_t>(h, static_cast<std::ptrdiff_t>(out) - 1);
  lo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(l, 0));
  hi = h < l ? lo : static_cast<std::size_t>(h + 1);
}

// Accumulates a grouped cross-correlation into `out` (out_c, out_h, out_w).
// For every output element the terms are added in (in-channel, kh, kw) order.
template <typename Acc, typename In, typename W>
void conv_accumulate(const ConvGeometry& g, const In* in, const W* w, Acc* out) {
  const std::size_t ipg = g.in_per_group(), opg = g.out_per_group(), k = g.kernel;
  const std::size_t out_plane = g.out_h * g.out_w, in_plane = g.in_h * g.in_w;
  for (std::size_t oc = 0; oc < g.out_c; ++oc) {
    const std::size_t grp = oc / opg;
    Acc* o = out + oc * out_plane;
    for (std::size_t icg = 0; icg < ipg; ++icg) {
      const In* src = in + (grp * ipg + icg) * in_plane;
      for (std::size_t kh = 0; kh < k; ++kh) {
        std::size_t oy_lo, oy_hi;
        valid_range(g.in_h, g.out_h, kh, g.stride, g.pad, oy_lo, oy_hi);
        for (std::size_t kw = 0; kw < k; ++kw) {
          const Acc wv = static_cast<Acc>(w[((oc * ipg + icg) * k + kh) * k + kw]);
          std::size_t ox_lo, ox_hi;
          valid_range(g.in_w, g.out_w, kw, g.stride, g.pad, ox_lo, ox_hi);
          for (std::size_t oy = oy_lo; oy < oy_hi; ++oy) {
            const In* row = src + (oy * g.stride + kh - g.pad) * g.in_w;
            Acc* orow = o + oy * g.out_w;
            if (g.stride == 1) {
              const In* r = row + (ox_lo + kw - g.pad);
              for (std::size_t ox = ox_lo; ox < ox_hi; ++ox) orow[ox] += wv * static_cast<Acc>(r[ox - ox_lo]);
            } else {
              for (std::size_t ox = ox_lo; ox < ox_hi; ++ox)
                orow[ox] += wv * static_cast<Acc>(row[ox * g.stride + kw - g.pad]);
            }
          }
        }
      }
    }
  }
}

// Gradients of the cross-correlation. grad_in / grad_w / grad_b are added to.
template <typename T>
void conv_backward(const ConvGeometry& g, const T* in, const T* w, const T* gout, T* grad_in, T* grad_w,
                   T* grad_b) {
  const std::size_t ipg = g.in_per_group(), opg = g.out_per_group(), k = g.kernel;
  const std::size_t out_plane = g.out_h * g.out_w, in_plane = g.in_h * g.in_w;
  for (std::size_t oc = 0; oc < g.out_c; ++oc) {
    const std::size_t grp = oc / opg;
    const T* go = gout + oc * out_plane;
    if (grad_b) {
      T s = 0;
      for (std::size_t i = 0; i < out_plane; ++i) s += go[i];
      grad_b[oc] += s;
    }
    for (std::size_t icg = 0; icg < ipg; ++icg) {
      const std::size_t ic = grp * ipg + icg;
      const T* src = in + ic * in_plane;
      T* gsrc = grad_in ? grad_in + ic * in_plane : nullptr;
      for (std::size_t kh = 0; kh < k; ++kh) {
        std::size_t oy_lo, oy_hi;
        valid_range(g.in_h, g.out_h, kh, g.stride, g.pad, oy_lo, oy_hi);
        for (std::size_t kw = 0; kw < k; ++kw) {
          const std::size_t widx = ((oc * ipg + icg) * k + kh) * k + kw;
          const T wv = w[widx];
          std::size_t ox_lo, ox_hi;
          valid_range(g.in_w, g.out_w, kw, g.stride, g.pad, ox_lo, ox_hi);
          T gw = 0;
          for (std::size_t oy = oy_lo; oy < oy_hi; ++oy) {
            const std::size_t base = (oy * g.stride + kh - g.pad) * g.in_w + kw - g.pad;
            const T* grow = go + oy * g.out_w;
            for (std::size_t ox = ox_lo; ox < ox_hi; ++ox) {
              const std::size_t ii = base + ox * g.stride;
              gw += grow[ox] * src[ii];
              if (gsrc) gsrc[ii] += wv * grow[ox];
            }
          }
          if (grad_w) grad_w[widx] += gw;
        }
      }
    }
  }
}

inline std::size_t groups_for(const LayerSpec& l, std::size_t in_channels) {
  return l.kind == LayerKind::depthwise_conv2d ? in_channels : 1;
}

}  // namespace detail

inline Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
                     std::size_t pad, std::size_t groups) {
  if (weight.rank() != 4 || weight.dim(2) != weight.dim(3)) throw ShapeError("conv2d weight must be (out, in, k, k)");
  const auto g = ConvGeometry::make(input.shape(), weight.dim(0), weight.dim(2), stride, pad, groups);
  if (weight.dim(1) != g.in_per_group()) throw ShapeError("conv2d weight input channels do not match the input");
  if (bias.numel() != g.out_c) throw ShapeError("conv2d bias must have one entry per output channel");
  std::vector<float> out(g.out_c * g.out_h * g.out_w, 0.0f);
  detail::conv_accumulate(g, input.data().data(), weight.data().data(), out.data());
  const std::size_t plane = g.out_h * g.out_w;
  for (std::size_t oc = 0; oc < g.out_c; ++oc)
    for (std::size_t i = 0; i < plane; ++i) out[oc * plane + i] += bias[oc];
  return Tensor({g.out_c, g.out_h, g.out_w}, std::move(out));
}

// Dense layers run as 1x1 convolutions over a (in, 1, 1) input.
inline Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  if (weight.rank() != 2 || input.numel() != weight.dim(1)) throw ShapeError("dense: input/weight size mismatch");
  return conv2d(input.reshaped({input.numel(), 1, 1}), weight.reshaped({weight.dim(0), weight.dim(1), 1, 1}), bias, 1,
                0, 1);
}

inline Tensor conv2d(const Tensor& input, const LayerSpec& l) {
  switch (l.kind) {
    case LayerKind::conv2d:
    case LayerKind::depthwise_conv2d:
      return conv2d(input, l.weight, l.bias, l.stride, l.pad, detail::groups_for(l, input.dim(0)));
    case LayerKind::dense:
      return dense(input, l.weight, l.bias);
    default:
      throw UsageError("layer '" + l.name + "' is not a convolution");
  }
}

// Largest fan-in for which 32-bit accumulation of int8 products cannot overflow.
inline constexpr std::size_t kMaxInt8FanIn = (std::size_t{1} << 31) / (127 * 127);

inline bool int8_accumulator_safe(std::size_t fan_in) { return fan_in * 127 * 127 < (std::size_t{1} << 31); }

// Raw int32 accumulators of an int8 convolution.
inline std::vector<std::int32_t> conv2d_int8_accumulate(const QuantizedTensor& qinput, const QuantizedTensor& qweight,
                                                        std::size_t stride, std::size_t pad, std::size_t groups) {
  if (qweight.shape.size() != 4) throw ShapeError("int8 conv weight must be (out, in, k, k)");
  const auto g = ConvGeometry::make(qinput.shape, qweight.shape[0], qweight.shape[2], stride, pad, groups);
  if (qweight.shape[1] != g.in_per_group()) throw ShapeError("int8 conv weight input channels do not match the input");
  if (!int8_accumulator_safe(g.fan_in()))
    throw UsageError("fan-in " + std::to_string(g.fan_in()) + " can overflow the 32-bit accumulator");
  const auto x = qinput.values();
  const auto w = qweight.values();
  std::vector<std::int32_t> acc(g.out_c * g.out_h * g.out_w, 0);
  detail::conv_accumulate(g, x.data(), w.data(), acc.data());
  return acc;
}

// acc[c] * s_a * s_w[c] + bias[c], with a per-tensor input scale and per-output
// channel weight scales.
inline Tensor conv2d_int8(const QuantizedTensor& qinput, const QuantizedTensor& qweight, const Tensor& bias,
                          std::size_t stride, std::size_t pad, std::size_t groups) {
  if (qinput.params.granularity.kind != Granularity::Kind::per_tensor || qinput.params.bit_width != BitWidth::int8)
    throw UsageError("int8 conv input must be per-tensor INT8");
  if (qweight.params.granularity != Granularity::per_axis(0) || qweight.params.bit_width != BitWidth::int8)
    throw UsageError("int8 conv weights must be per-output-channel INT8");
  const auto acc = conv2d_int8_accumulate(qinput, qweight, stride, pad, groups);
  const auto g = ConvGeometry::make(qinput.shape, qweight.shape[0], qweight.shape[2], stride, pad, groups);
  if (bias.numel() != g.out_c) throw ShapeError("int8 conv bias must have one entry per output channel");
  const float sa = qinput.params.scales[0];
  const std::size_t plane = g.out_h * g.out_w;
  std::vector<float> out(acc.size());
  for (std::size_t oc = 0; oc < g.out_c; ++oc) {
    const float m = sa * qweight.params.scales[oc];
    for (std::size_t i = 0; i < plane; ++i)
      out[oc * plane + i] = static_cast<float>(acc[oc * plane + i]) * m + bias[oc];
  }
  return Tensor({g.out_c, g.out_h, g.out_w}, std::move(out));
}

inline Tensor relu6(const Tensor& x) {
  return map(x, [](float v) { return std::min(std::max(v, 0.0f), 6.0f); });
}

inline Tensor sigmoid(const Tensor& x) {
  return map(x, [](float v) { return 1.0f / (1.0f + std::exp(-v)); });
}

inline Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() != 3) throw ShapeError("global_avg_pool expects CHW input");
  const std::size_t c = x.dim(0), plane = x.dim(1) * x.dim(2);
  std::vector<float> out(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    float s = 0.0f;
    for (std::size_t i = 0; i < plane; ++i) s += x[ch * plane + i];
    out[ch] = s / static_cast<float>(plane);
  }
  return Tensor({c, 1, 1}, std::move(out));
}

inline Tensor batch_norm(const Tensor& x, const LayerSpec& bn) {
  const std::size_t c = x.dim(0), plane = x.numel() / c;
  if (bn.gamma.numel() != c) throw ShapeError("batch norm channel mismatch in '" + bn.name + "'");
  std::vector<float> out(x.numel());
  for (std::size_t ch = 0; ch < c; ++ch) {
    const float inv = bn.gamma[ch] / std::sqrt(bn.var[ch] + bn.eps);
    for (std::size_t i = 0; i < plane; ++i)
      out[ch * plane + i] = (x[ch * plane + i] - bn.mean[ch]) * inv + bn.beta[ch];
  }
  return Tensor(x.shape(), std::move(out));
}

inline Tensor apply_layer(const LayerSpec& l, const Tensor& x) {
  switch (l.kind) {
    case LayerKind::conv2d:
    case LayerKind::depthwise_conv2d:
    case LayerKind::dense: return conv2d(x, l);
    case LayerKind::batch_norm: return batch_norm(x, l);
    case LayerKind::relu6: return relu6(x);
    case LayerKind::global_avg_pool: return global_avg_pool(x);
    case LayerKind::sigmoid: return sigmoid(x);
  }
  return x;
}

// W' = W * gamma / sqrt(var + eps) per output channel,
// b' = (b - mean) * gamma / sqrt(var + eps) + beta.
inline LayerSpec fold_batchnorm(const LayerSpec& conv, const LayerSpec& bn) {
  if (!is_quantizable(conv.kind)) throw UsageError("batch norm '" + bn.name + "' must follow a conv or dense layer");
  if (bn.kind != LayerKind::batch_norm) throw UsageError("'" + bn.name + "' is not a batch norm layer");
  const std::size_t oc = conv.out_channels();
  if (bn.gamma.numel() != oc) throw ShapeError("batch norm '" + bn.name + "' does not match '" + conv.name + "'");
  const std::size_t per = conv.weight.numel() / oc;
  std::vector<float> w(conv.weight.numel()), b(oc);
  for (std::size_t c = 0; c < oc; ++c) {
    const float denom = bn.var[c] + bn.eps;
    if (!(denom > 0.0f)) throw NumericError("batch norm variance + eps must be positive", c);
    const float m = bn.gamma[c] / std::sqrt(denom);
    for (std::size_t i = 0; i < per; ++i) w[c * per + i] = conv.weight[c * per + i] * m;
    b[c] = (conv.bias[c] - bn.mean[c]) * m + bn.beta[c];
  }
  LayerSpec out = conv;
  out.weight = Tensor(conv.weight.shape(), std::move(w));
  out.bias = Tensor({oc}, std::move(b));
  return out;
}

// Folds every batch norm that directly follows a conv/dense layer.
inline ModelGraph fold_graph(const ModelGraph& g) {
  ModelGraph out;
  out.input = g.input;
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    const auto& l = g.layers[i];
    if (is_quantizable(l.kind) && i + 1 < g.layers.size() && g.layers[i + 1].kind == LayerKind::batch_norm) {
      out.layers.push_back(fold_batchnorm(l, g.layers[i + 1]));
      ++i;
    } else {
      out.layers.push_back(l);
    }
  }
  return out;
}

// Input of every layer plus the final output.
inline std::vector<Tensor> forward_trace(const ModelGraph& g, const Tensor& image) {
  if (image.shape() != g.input)
    throw ShapeError("input image " + shape_string(image.shape()) + " does not match model " + shape_string(g.input));
  std::vector<Tensor> acts{image};
  acts.reserve(g.layers.size() + 1);
  for (const auto& l : g.layers) acts.push_back(apply_layer(l, acts.back()));
  return acts;
}

inline float forward_fp32(const ModelGraph& g, const Tensor& image) {
  if (image.shape() != g.input)
    throw ShapeError("input image " + shape_string(image.shape()) + " does not match model " + shape_string(g.input));
  Tensor x = image;
  for (const auto& l : g.layers) x = apply_layer(l, x);
  return x[0];
}

}  // namespace qbench
