#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "qbench/errors.hpp"
#include "qbench/rng.hpp"
#include "qbench/tensor.hpp"

namespace qbench {

enum class LayerKind { conv2d, depthwise_conv2d, batch_norm, relu6, global_avg_pool, dense, sigmoid };

inline std::string_view to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv2d: return "conv";
    case LayerKind::depthwise_conv2d: return "dwconv";
    case LayerKind::batch_norm: return "bn";
    case LayerKind::relu6: return "relu6";
    case LayerKind::global_avg_pool: return "gap";
    case LayerKind::dense: return "dense";
    case LayerKind::sigmoid: return "sigmoid";
  }
  return "?";
}

inline LayerKind parse_layer_kind(std::string_view s) {
  for (auto k : {LayerKind::conv2d, LayerKind::depthwise_conv2d, LayerKind::batch_norm, LayerKind::relu6,
                 LayerKind::global_avg_pool, LayerKind::dense, LayerKind::sigmoid})
    if (to_string(k) == s) return k;
  throw UsageError("unknown layer kind '" + std::string(s) + "'");
}

// Layers with weights that the precision plan may move to an integer width.
constexpr bool is_quantizable(LayerKind k) noexcept {
  return k == LayerKind::conv2d || k == LayerKind::depthwise_conv2d || k == LayerKind::dense;
}

struct LayerSpec {
  LayerKind kind = LayerKind::relu6;
  std::string name;

  // conv: weight (out, in, k, k); depthwise: (C, 1, k, k); dense: (out, in)
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;
  Tensor weight;
  Tensor bias;

  // batch norm, per channel
  Tensor mean, var, gamma, beta;
  float eps = 1e-5f;

  std::size_t out_channels() const { return weight.empty() ? 0 : weight.dim(0); }

  static LayerSpec conv(std::string name, Tensor weight, Tensor bias, std::size_t stride, std::size_t pad) {
    LayerSpec l;
    l.kind = LayerKind::conv2d;
    l.name = std::move(name);
    l.kernel = weight.rank() == 4 ? weight.dim(2) : 0;
    l.stride = stride;
    l.pad = pad;
    l.weight = std::move(weight);
    l.bias = std::move(bias);
    return l;
  }

  static LayerSpec depthwise(std::string name, Tensor weight, Tensor bias, std::size_t stride, std::size_t pad) {
    LayerSpec l = conv(std::move(name), std::move(weight), std::move(bias), stride, pad);
    l.kind = LayerKind::depthwise_conv2d;
    return l;
  }

  static LayerSpec dense(std::string name, Tensor weight, Tensor bias) {
    LayerSpec l;
    l.kind = LayerKind::dense;
    l.name = std::move(name);
    l.weight = std::move(weight);
    l.bias = std::move(bias);
    return l;
  }

  static LayerSpec batch_norm(std::string name, Tensor mean, Tensor var, Tensor gamma, Tensor beta, float eps) {
    LayerSpec l;
    l.kind = LayerKind::batch_norm;
    l.name = std::move(name);
    l.mean = std::move(mean);
    l.var = std::move(var);
    l.gamma = std::move(gamma);
    l.beta = std::move(beta);
    l.eps = eps;
    return l;
  }

  static LayerSpec simple(LayerKind kind, std::string name) {
    LayerSpec l;
    l.kind = kind;
    l.name = std::move(name);
    return l;
  }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct ModelGraph {
  Shape input;  // (C, H, W)
  std::vector<LayerSpec> layers;

  const LayerSpec* find(std::string_view name) const {
    for (const auto& l : layers)
      if (l.name == name) return &l;
    return nullptr;
  }

  friend bool operator==(const ModelGraph&, const ModelGraph&) = default;
};

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  if (in + 2 * pad < k) throw ShapeError("convolution kernel larger than padded input");
  return (in + 2 * pad - k) / stride + 1;
}

// Output shape of one layer, validating weight shapes against the input.
inline Shape layer_output_shape(const LayerSpec& l, const Shape& in) {
  auto fail = [&](const std::string& why) { throw ShapeError("layer '" + l.name + "': " + why); };
  switch (l.kind) {
    case LayerKind::conv2d:
    case LayerKind::depthwise_conv2d: {
      if (in.size() != 3) fail("expects CHW input, got " + shape_string(in));
      if (l.weight.rank() != 4 || l.weight.dim(2) != l.kernel || l.weight.dim(3) != l.kernel)
        fail("weight must be (out, in, k, k)");
      if (l.stride == 0) fail("stride must be >= 1");
      const std::size_t in_per_group = l.kind == LayerKind::conv2d ? in[0] : 1;
      if (l.weight.dim(1) != in_per_group) fail("weight input channels do not match input " + shape_string(in));
      if (l.kind == LayerKind::depthwise_conv2d && l.weight.dim(0) != in[0])
        fail("depthwise output channels must equal input channels");
      if (l.bias.rank() != 1 || l.bias.dim(0) != l.weight.dim(0)) fail("bias must have one entry per output channel");
      return {l.weight.dim(0), conv_out_extent(in[1], l.kernel, l.stride, l.pad),
              conv_out_extent(in[2], l.kernel, l.stride, l.pad)};
    }
    case LayerKind::dense: {
      if (l.weight.rank() != 2) fail("dense weight must be (out, in)");
      if (shape_numel(in) != l.weight.dim(1)) fail("dense input size does not match weight " + shape_string(in));
      if (l.bias.rank() != 1 || l.bias.dim(0) != l.weight.dim(0)) fail("bias must have one entry per output");
      return {l.weight.dim(0), 1, 1};
    }
    case LayerKind::batch_norm: {
      if (in.empty()) fail("empty input");
      for (const Tensor* t : {&l.mean, &l.var, &l.gamma, &l.beta})
        if (t->rank() != 1 || t->dim(0) != in[0]) fail("batch norm parameters must have one entry per channel");
      return in;
    }
    case LayerKind::global_avg_pool:
      if (in.size() != 3) fail("expects CHW input");
      return {in[0], 1, 1};
    case LayerKind::relu6:
    case LayerKind::sigmoid:
      return in;
  }
  return in;
}

// Shapes flowing through the graph: element 0 is the input, element i+1 the
// output of layer i.
inline std::vector<Shape> infer_shapes(const ModelGraph& g) {
  if (g.input.size() != 3) throw ShapeError("model input must be (C, H, W)");
  std::vector<Shape> shapes{g.input};
  for (const auto& l : g.layers) shapes.push_back(layer_output_shape(l, shapes.back()));
  return shapes;
}

inline void validate_graph(const ModelGraph& g) {
  std::set<std::string> names;
  for (const auto& l : g.layers) {
    if (l.name.empty()) throw UsageError("layer names must be non-empty");
    if (!names.insert(l.name).second) throw UsageError("duplicate layer name '" + l.name + "'");
  }
  const auto shapes = infer_shapes(g);
  if (g.layers.empty() || g.layers.back().kind != LayerKind::sigmoid || shape_numel(shapes.back()) != 1)
    throw ShapeError("model must end in a sigmoid over a single logit");
}

inline std::size_t parameter_count(const ModelGraph& g) {
  std::size_t n = 0;
  for (const auto& l : g.layers)
    for (const Tensor* t : {&l.weight, &l.bias, &l.gamma, &l.beta}) n += t->numel();
  return n;
}

namespace detail {

inline Tensor he_normal(Shape shape, std::size_t fan_in, Rng& rng) {
  const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
  std::vector<float> v(shape_numel(shape));
  for (float& x : v) x = static_cast<float>(rng.normal(0.0, sd));
  return Tensor(std::move(shape), std::move(v));
}

inline LayerSpec identity_bn(std::string name, std::size_t channels) {
  return LayerSpec::batch_norm(std::move(name), Tensor({channels}), Tensor::filled({channels}, 1.0f),
                               Tensor::filled({channels}, 1.0f), Tensor({channels}), 1e-5f);
}

}  // namespace detail

struct MobileNetBlock {
  std::size_t channels;
  std::size_t stride;
};

// Depthwise-separable stages of the original MobileNet, before width scaling.
inline const std::vector<MobileNetBlock>& mobilenet_v1_table() {
  static const std::vector<MobileNetBlock> t{{64, 1},  {128, 2}, {128, 1}, {256, 2}, {256, 1},
                                             {512, 2}, {512, 1}, {512, 1}, {512, 1}, {512, 1},
                                             {512, 1}, {1024, 2}, {1024, 1}};
  return t;
}

inline std::size_t scaled_channels(std::size_t c, double width_mult) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(c) * width_mult)));
}

// Stem conv, `blocks` depthwise-separable units, global pooling and a single
// sigmoid logit. Every conv is followed by a batch-norm slot and ReLU6.
inline ModelGraph build_mini_mobilenet(double width_mult, std::size_t blocks, const Shape& input,
                                       std::uint64_t seed = 0) {
  if (blocks == 0) throw UsageError("mini MobileNet needs at least one block");
  if (!(width_mult > 0.0)) throw UsageError("width multiplier must be positive");
  if (input.size() != 3 || shape_numel(input) == 0) throw UsageError("input shape must be (C, H, W)");

  Rng rng(seed);
  ModelGraph g;
  g.input = input;
  auto add_conv_unit = [&](const std::string& prefix, LayerKind kind, std::size_t in_c, std::size_t out_c,
                           std::size_t k, std::size_t stride) {
    const std::size_t in_per_group = kind == LayerKind::conv2d ? in_c : 1;
    Tensor w = detail::he_normal({out_c, in_per_group, k, k}, in_per_group * k * k, rng);
    Tensor b({out_c});
    const std::size_t pad = k / 2;
    g.layers.push_back(kind == LayerKind::conv2d ? LayerSpec::conv(prefix + ".0", std::move(w), std::move(b), stride, pad)
                                                 : LayerSpec::depthwise(prefix + ".0", std::move(w), std::move(b),
                                                                        stride, pad));
    g.layers.push_back(detail::identity_bn(prefix + ".1", out_c));
    g.layers.push_back(LayerSpec::simple(LayerKind::relu6, prefix + ".2"));
  };

  std::size_t c = scaled_channels(32, width_mult);
  add_conv_unit("features.0", LayerKind::conv2d, input[0], c, 3, 2);
  const auto& table = mobilenet_v1_table();
  for (std::size_t i = 0; i < blocks; ++i) {
    const auto& spec = table[std::min(i, table.size() - 1)];
    const std::size_t out_c = scaled_channels(spec.channels, width_mult);
    const std::string p = "features." + std::to_string(i + 1) + ".conv.";
    add_conv_unit(p + "0", LayerKind::depthwise_conv2d, c, c, 3, spec.stride);
    add_conv_unit(p + "1", LayerKind::conv2d, c, out_c, 1, 1);
    c = out_c;
  }
  g.layers.push_back(LayerSpec::simple(LayerKind::global_avg_pool, "pool"));
  {
    const double sd = std::sqrt(1.0 / static_cast<double>(c));
    std::vector<float> w(c);
    for (float& x : w) x = static_cast<float>(rng.normal(0.0, sd));
    g.layers.push_back(LayerSpec::dense("classifier", Tensor({1, c}, std::move(w)), Tensor({1})));
  }
  g.layers.push_back(LayerSpec::simple(LayerKind::sigmoid, "sigmoid"));
  validate_graph(g);
  return g;
}

}  // namespace qbench
