#pragma once

// Central-difference gradient check of Network<double>, shared by the unit
// tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "qbench/nn/graph.hpp"
#include "qbench/reftrain/network.hpp"

namespace gradcheck {

using namespace qbench;

// Small graph with randomised batch-norm statistics and biases so every
// layer kind has non-trivial gradients.
inline ModelGraph random_graph(std::uint64_t seed) {
  ModelGraph g = build_mini_mobilenet(0.125, 2, {3, 7, 7}, seed);
  Rng rng(derive_seed(seed, 77));
  for (auto& l : g.layers) {
    if (l.kind == LayerKind::batch_norm) {
      const auto n = l.gamma.numel();
      l.mean = oracle::random_normal(rng, {n}, 0.2);
      l.var = oracle::random_tensor(rng, {n}, 0.5, 1.5);
      l.gamma = oracle::random_tensor(rng, {n}, 0.5, 1.5);
      l.beta = oracle::random_tensor(rng, {n}, 0.2, 1.0);  // keeps most ReLU6 units active
    } else if (!l.bias.empty()) {
      l.bias = oracle::random_normal(rng, l.bias.shape(), 0.2);
    }
  }
  return g;
}

struct LayerCheck {
  std::string layer;
  LayerKind kind;
  double worst_rel = 0.0;  // max over sampled parameters
};

// Objective sum_b c_b * logit_b over a batch of 2-3 images (training mode) or
// one image (inference mode). Samples `per_layer` parameters of every
// trainable layer.
inline std::vector<LayerCheck> run(std::uint64_t seed, bool training, int per_layer = 6) {
  const ModelGraph g = random_graph(seed);
  Rng rng(seed);
  Network<double> net(g);
  const std::size_t batch = training ? 2 + rng.below(2) : 1;
  std::vector<std::vector<double>> images;
  std::vector<double> coeff;
  for (std::size_t b = 0; b < batch; ++b) {
    std::vector<double> im(shape_numel(g.input));
    for (auto& v : im) v = rng.uniform();
    images.push_back(std::move(im));
    coeff.push_back(rng.uniform(-1.0, 1.0));
  }
  std::vector<const double*> ptrs;
  for (const auto& im : images) ptrs.push_back(im.data());

  auto objective = [&] {
    Network<double>::Cache c;
    const auto z = net.forward_batch(ptrs, c, training);
    double s = 0.0;
    for (std::size_t b = 0; b < z.size(); ++b) s += coeff[b] * z[b];
    return s;
  };

  Network<double>::Cache cache;
  net.forward_batch(ptrs, cache, training);
  std::vector<double> grad(net.parameter_count(), 0.0);
  net.backward(cache, coeff, grad);

  std::vector<LayerCheck> out;
  auto p = net.params();
  for (std::size_t li = 0; li < net.layer_count(); ++li) {
    const std::size_t lo = net.param_begin(li), hi = net.param_end(li);
    if (lo == hi) continue;
    LayerCheck lc{net.layer(li).name, net.layer(li).kind, 0.0};
    for (int s = 0; s < per_layer; ++s) {
      const std::size_t k = lo + rng.below(hi - lo);
      const double orig = p[k], h = 1e-6;
      p[k] = orig + h;
      const double fp = objective();
      p[k] = orig - h;
      const double fm = objective();
      p[k] = orig;
      const double num = (fp - fm) / (2 * h);
      const double scale = std::max({std::fabs(num), std::fabs(grad[k]), 1e-6});
      lc.worst_rel = std::max(lc.worst_rel, std::fabs(num - grad[k]) / scale);
    }
    out.push_back(lc);
  }
  return out;
}

}  // namespace gradcheck
