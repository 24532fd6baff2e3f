#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "qbench/errors.hpp"
#include "qbench/nn/graph.hpp"
#include "qbench/nn/kernels.hpp"
#include "qbench/tensor.hpp"

namespace qbench {

// Trainable mirror of a ModelGraph with a flat parameter vector and
// hand-written backward passes for the layer kinds the mini MobileNet uses.
// Batch norm normalizes with batch statistics in training mode and keeps
// running estimates (momentum update, unbiased variance) for inference.
// Templated on the scalar so gradient checks can run in double.
template <typename T>
class Network {
 public:
  struct Cache {
    std::size_t batch = 0;
    bool training = false;
    std::vector<std::vector<T>> acts;  // acts[i] holds the batch input of layer i
    std::vector<std::vector<T>> bn_mean, bn_inv, bn_var;
  };

  explicit Network(const ModelGraph& g, double bn_momentum = 0.1) : graph_(g), momentum_(bn_momentum) {
    validate_graph(g);
    shapes_ = infer_shapes(g);
    running_mean_.resize(g.layers.size());
    running_var_.resize(g.layers.size());
    for (std::size_t i = 0; i < g.layers.size(); ++i) {
      const auto& l = g.layers[i];
      Slot s;
      s.offset = params_.size();
      switch (l.kind) {
        case LayerKind::conv2d:
        case LayerKind::depthwise_conv2d:
          s.geom = ConvGeometry::make(shapes_[i], l.out_channels(), l.kernel, l.stride, l.pad,
                                      detail::groups_for(l, shapes_[i][0]));
          append(l.weight);
          s.second = params_.size();
          append(l.bias);
          break;
        case LayerKind::dense:
          s.geom = ConvGeometry::make({l.weight.dim(1), 1, 1}, l.weight.dim(0), 1, 1, 0, 1);
          append(l.weight);
          s.second = params_.size();
          append(l.bias);
          break;
        case LayerKind::batch_norm:
          append(l.gamma);
          s.second = params_.size();
          append(l.beta);
          for (float v : l.mean.data()) running_mean_[i].push_back(static_cast<T>(v));
          for (float v : l.var.data()) running_var_[i].push_back(static_cast<T>(v));
          break;
        default:
          break;
      }
      s.end = params_.size();
      slots_.push_back(s);
    }
  }

  std::size_t parameter_count() const { return params_.size(); }
  std::span<T> params() { return params_; }
  std::span<const T> params() const { return params_; }
  std::size_t layer_count() const { return slots_.size(); }
  std::size_t param_begin(std::size_t layer) const { return slots_[layer].offset; }
  std::size_t param_end(std::size_t layer) const { return slots_[layer].end; }
  const LayerSpec& layer(std::size_t i) const { return graph_.layers[i]; }
  const Shape& input_shape(std::size_t i) const { return shapes_[i]; }

  // Current parameters and running statistics written back into a float graph.
  ModelGraph to_graph() const {
    ModelGraph g = graph_;
    for (std::size_t i = 0; i < g.layers.size(); ++i) {
      auto& l = g.layers[i];
      const auto& s = slots_[i];
      switch (l.kind) {
        case LayerKind::conv2d:
        case LayerKind::depthwise_conv2d:
        case LayerKind::dense:
          l.weight = extract(l.weight.shape(), s.offset);
          l.bias = extract(l.bias.shape(), s.second);
          break;
        case LayerKind::batch_norm:
          l.gamma = extract(l.gamma.shape(), s.offset);
          l.beta = extract(l.beta.shape(), s.second);
          l.mean = to_tensor(l.mean.shape(), running_mean_[i]);
          l.var = to_tensor(l.var.shape(), running_var_[i]);
          break;
        default:
          break;
      }
    }
    return g;
  }

  // Inference on one image with running statistics; returns the logit
  // feeding the final sigmoid.
  T forward(std::span<const T> image, Cache& cache) const {
    const T* p = image.data();
    return forward_batch(std::span<const T* const>(&p, 1), cache, false)[0];
  }

  // Batch forward. In training mode batch norm uses the batch statistics,
  // which makes every logit depend on the whole batch.
  std::vector<T> forward_batch(std::span<const T* const> images, Cache& cache, bool training) const {
    const std::size_t n = graph_.layers.size(), b = images.size();
    if (b == 0) throw UsageError("empty batch");
    const std::size_t in_numel = shape_numel(shapes_[0]);
    cache.batch = b;
    cache.training = training;
    cache.acts.resize(n);
    cache.bn_mean.resize(n);
    cache.bn_inv.resize(n);
    cache.bn_var.resize(n);
    cache.acts[0].resize(b * in_numel);
    for (std::size_t k = 0; k < b; ++k) std::copy_n(images[k], in_numel, cache.acts[0].begin() + k * in_numel);
    for (std::size_t i = 0; i + 1 < n; ++i) {
      cache.acts[i + 1].assign(b * shape_numel(shapes_[i + 1]), T(0));
      forward_layer(i, cache);
    }
    return cache.acts[n - 1];
  }

  // Folds the batch statistics of a training-mode forward into the running
  // estimates.
  void update_running_stats(const Cache& cache) {
    if (!cache.training) return;
    const T m = static_cast<T>(momentum_);
    for (std::size_t i = 0; i < graph_.layers.size(); ++i) {
      if (graph_.layers[i].kind != LayerKind::batch_norm) continue;
      const std::size_t c = shapes_[i][0], count = cache.batch * shape_numel(shapes_[i]) / c;
      const T bessel = count > 1 ? static_cast<T>(count) / static_cast<T>(count - 1) : T(1);
      for (std::size_t ch = 0; ch < c; ++ch) {
        running_mean_[i][ch] = (T(1) - m) * running_mean_[i][ch] + m * cache.bn_mean[i][ch];
        running_var_[i][ch] = (T(1) - m) * running_var_[i][ch] + m * cache.bn_var[i][ch] * bessel;
      }
    }
  }

  // Accumulates d(loss)/d(params) into grad given d(loss)/d(logit) per sample.
  void backward(const Cache& cache, std::span<const T> dlogits, std::span<T> grad) const {
    const std::size_t n = graph_.layers.size();
    if (dlogits.size() != cache.batch) throw ShapeError("logit gradient count differs from the batch");
    std::vector<T> g_out(dlogits.begin(), dlogits.end()), g_in;
    for (std::size_t i = n - 1; i-- > 0;) {
      g_in.assign(cache.batch * shape_numel(shapes_[i]), T(0));
      backward_layer(i, cache, g_out, g_in, grad);
      std::swap(g_in, g_out);
    }
  }

 private:
  struct Slot {
    std::size_t offset = 0, second = 0, end = 0;
    ConvGeometry geom;
  };

  void append(const Tensor& t) {
    for (float v : t.data()) params_.push_back(static_cast<T>(v));
  }

  static Tensor to_tensor(const Shape& shape, const std::vector<T>& v) {
    std::vector<float> f(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) f[i] = static_cast<float>(v[i]);
    return Tensor(shape, std::move(f));
  }

  Tensor extract(const Shape& shape, std::size_t offset) const {
    std::vector<float> v(shape_numel(shape));
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(params_[offset + i]);
    return Tensor(shape, std::move(v));
  }

  void forward_layer(std::size_t i, Cache& cache) const {
    const auto& l = graph_.layers[i];
    const auto& s = slots_[i];
    const std::vector<T>& in = cache.acts[i];
    std::vector<T>& out = cache.acts[i + 1];
    const std::size_t b = cache.batch, in_n = in.size() / b, out_n = out.size() / b;
    switch (l.kind) {
      case LayerKind::conv2d:
      case LayerKind::depthwise_conv2d:
      case LayerKind::dense: {
        const std::size_t plane = s.geom.out_h * s.geom.out_w;
        for (std::size_t k = 0; k < b; ++k) {
          T* o = out.data() + k * out_n;
          detail::conv_accumulate(s.geom, in.data() + k * in_n, params_.data() + s.offset, o);
          for (std::size_t oc = 0; oc < s.geom.out_c; ++oc)
            for (std::size_t p = 0; p < plane; ++p) o[oc * plane + p] += params_[s.second + oc];
        }
        break;
      }
      case LayerKind::batch_norm: {
        const std::size_t c = shapes_[i][0], plane = in_n / c;
        auto& mu_v = cache.bn_mean[i];
        auto& inv_v = cache.bn_inv[i];
        auto& var_v = cache.bn_var[i];
        mu_v.resize(c);
        inv_v.resize(c);
        var_v.resize(c);
        for (std::size_t ch = 0; ch < c; ++ch) {
          T mu, var;
          if (cache.training) {
            double sum = 0, sq = 0;
            for (std::size_t k = 0; k < b; ++k)
              for (std::size_t p = 0; p < plane; ++p) sum += static_cast<double>(in[k * in_n + ch * plane + p]);
            const double count = static_cast<double>(b * plane), mean = sum / count;
            for (std::size_t k = 0; k < b; ++k)
              for (std::size_t p = 0; p < plane; ++p) {
                const double d = static_cast<double>(in[k * in_n + ch * plane + p]) - mean;
                sq += d * d;
              }
            mu = static_cast<T>(mean);
            var = static_cast<T>(sq / count);
          } else {
            mu = running_mean_[i][ch];
            var = running_var_[i][ch];
          }
          const T inv = T(1) / std::sqrt(var + static_cast<T>(l.eps));
          mu_v[ch] = mu;
          inv_v[ch] = inv;
          var_v[ch] = var;
          const T gm = params_[s.offset + ch] * inv, bt = params_[s.second + ch];
          for (std::size_t k = 0; k < b; ++k)
            for (std::size_t p = 0; p < plane; ++p) {
              const std::size_t at = k * in_n + ch * plane + p;
              out[at] = (in[at] - mu) * gm + bt;
            }
        }
        break;
      }
      case LayerKind::relu6:
        for (std::size_t k = 0; k < in.size(); ++k) out[k] = std::min(std::max(in[k], T(0)), T(6));
        break;
      case LayerKind::global_avg_pool: {
        const std::size_t c = shapes_[i][0], plane = in_n / c;
        for (std::size_t k = 0; k < b; ++k)
          for (std::size_t ch = 0; ch < c; ++ch) {
            T acc = 0;
            for (std::size_t p = 0; p < plane; ++p) acc += in[k * in_n + ch * plane + p];
            out[k * out_n + ch] = acc / static_cast<T>(plane);
          }
        break;
      }
      case LayerKind::sigmoid:
        for (std::size_t k = 0; k < in.size(); ++k) out[k] = T(1) / (T(1) + std::exp(-in[k]));
        break;
    }
  }

  void backward_layer(std::size_t i, const Cache& cache, const std::vector<T>& g_out, std::vector<T>& g_in,
                      std::span<T> grad) const {
    const auto& l = graph_.layers[i];
    const auto& s = slots_[i];
    const std::vector<T>& in = cache.acts[i];
    const std::vector<T>& out = cache.acts[i + 1];
    const std::size_t b = cache.batch, in_n = in.size() / b, out_n = out.size() / b;
    switch (l.kind) {
      case LayerKind::conv2d:
      case LayerKind::depthwise_conv2d:
      case LayerKind::dense:
        for (std::size_t k = 0; k < b; ++k)
          detail::conv_backward(s.geom, in.data() + k * in_n, params_.data() + s.offset, g_out.data() + k * out_n,
                                i ? g_in.data() + k * in_n : nullptr, grad.data() + s.offset, grad.data() + s.second);
        break;
      case LayerKind::batch_norm: {
        const std::size_t c = shapes_[i][0], plane = in_n / c;
        const T count = static_cast<T>(b * plane);
        for (std::size_t ch = 0; ch < c; ++ch) {
          const T inv = cache.bn_inv[i][ch], mu = cache.bn_mean[i][ch];
          const T gamma = params_[s.offset + ch];
          T dg = 0, db = 0;
          for (std::size_t k = 0; k < b; ++k)
            for (std::size_t p = 0; p < plane; ++p) {
              const std::size_t at = k * in_n + ch * plane + p;
              dg += g_out[at] * (in[at] - mu) * inv;
              db += g_out[at];
            }
          grad[s.offset + ch] += dg;
          grad[s.second + ch] += db;
          for (std::size_t k = 0; k < b; ++k)
            for (std::size_t p = 0; p < plane; ++p) {
              const std::size_t at = k * in_n + ch * plane + p;
              if (cache.training) {
                const T xhat = (in[at] - mu) * inv;
                g_in[at] = gamma * inv * (g_out[at] - db / count - xhat * dg / count);
              } else {
                g_in[at] = g_out[at] * gamma * inv;
              }
            }
        }
        break;
      }
      case LayerKind::relu6:
        for (std::size_t k = 0; k < in.size(); ++k) g_in[k] = (in[k] > T(0) && in[k] < T(6)) ? g_out[k] : T(0);
        break;
      case LayerKind::global_avg_pool: {
        const std::size_t c = shapes_[i][0], plane = in_n / c;
        const T inv = T(1) / static_cast<T>(plane);
        for (std::size_t k = 0; k < b; ++k)
          for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t p = 0; p < plane; ++p) g_in[k * in_n + ch * plane + p] = g_out[k * out_n + ch] * inv;
        break;
      }
      case LayerKind::sigmoid:
        for (std::size_t k = 0; k < in.size(); ++k) g_in[k] = g_out[k] * out[k] * (T(1) - out[k]);
        break;
    }
  }

  ModelGraph graph_;
  double momentum_;
  std::vector<Shape> shapes_;
  std::vector<Slot> slots_;
  std::vector<T> params_;
  std::vector<std::vector<T>> running_mean_, running_var_;
};

}  // namespace qbench
