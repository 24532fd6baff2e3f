#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "qbench/errors.hpp"
#include "qbench/quant.hpp"
#include "qbench/tensor.hpp"

namespace qbench {

// Activation-aware INT4 weight quantization.
//
// A weight matrix W (out x in) is rescaled per input column by s, block
// quantized, and the inverse scaling is folded back so that
//   W_eff = deq(Q(W diag(s))) diag(s)^-1
// with s_j = a_j^alpha / w_j^(1 - alpha), where a_j and w_j are the activation
// and weight amax of column j. alpha is picked by grid search on the output MSE
// and refined with finite-difference descent steps.

struct AwqConfig {
  std::size_t block_size = 128;
  double alpha_grid = 0.05;
  double eta = 0.05;
  std::size_t max_refine_iters = 10;
  std::size_t calib_samples = 64;

  void validate() const {
    if (block_size == 0) throw UsageError("AWQ block size must be >= 1");
    if (!(alpha_grid > 0.0 && alpha_grid <= 1.0)) throw UsageError("AWQ alpha grid step must be in (0, 1]");
    if (!(eta > 0.0)) throw UsageError("AWQ eta must be positive");
  }
};

struct AwqResult {
  QuantizedTensor qweights;            // INT4, block granularity, of W diag(s)
  std::vector<float> channel_scales;   // s, one per input column
  double alpha_star = 0.0;
  double loss_at_alpha = 0.0;          // loss of the returned scales
  double unit_scale_loss = 0.0;        // loss of plain block quantization (s = 1)
  bool unit_fallback = false;          // s = 1 beat every alpha candidate
  std::vector<double> refine_trace;    // loss after each accepted descent step

  // deq(qweights) diag(s)^-1, the weights the floating path multiplies with.
  Tensor effective_weights() const;
};

inline QuantizedTensor block_quantize(const Tensor& w, std::size_t block_size, BitWidth b = BitWidth::int4) {
  if (w.empty()) throw ShapeError("block_quantize: empty weight");
  const auto g = Granularity::block(block_size);
  return quantize(w, calibrate_params(w, b, g));
}

inline std::vector<float> awq_channel_scales(double alpha, std::span<const float> act_amax,
                                             std::span<const float> w_amax) {
  if (act_amax.size() != w_amax.size()) {
    throw ShapeError("awq_channel_scales: " + std::to_string(act_amax.size()) + " activation vs " +
                     std::to_string(w_amax.size()) + " weight channels");
  }
  const std::size_t n = act_amax.size();
  std::vector<double> s(n);
  double log_sum = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double a = act_amax[j] > 0.0f ? act_amax[j] : 1.0;
    const double w = w_amax[j] > 0.0f ? w_amax[j] : 1.0;
    s[j] = std::pow(a, alpha) / std::pow(w, 1.0 - alpha);
    log_sum += std::log(s[j]);
  }
  const double norm = n ? std::exp(log_sum / static_cast<double>(n)) : 1.0;
  std::vector<float> out(n);
  for (std::size_t j = 0; j < n; ++j) out[j] = static_cast<float>(s[j] / norm);
  return out;
}

namespace detail {

struct MatrixView {
  std::size_t rows = 0, cols = 0;
};

inline MatrixView as_matrix(const Tensor& w) {
  if (w.empty()) throw ShapeError("AWQ: empty weight");
  return {w.dim(0), w.numel() / w.dim(0)};
}

inline Tensor scale_columns(const Tensor& w, std::span<const float> s, bool inverse) {
  const auto m = as_matrix(w);
  std::vector<float> out(w.numel());
  auto d = w.data();
  for (std::size_t r = 0; r < m.rows; ++r)
    for (std::size_t c = 0; c < m.cols; ++c) {
      const float v = d[r * m.cols + c];
      out[r * m.cols + c] = inverse ? v / s[c] : v * s[c];
    }
  return Tensor(w.shape(), std::move(out));
}

struct AwqCandidate {
  QuantizedTensor q;
  Tensor effective;
};

inline AwqCandidate awq_quantize_scaled(const Tensor& w, std::span<const float> s, std::size_t block_size) {
  auto q = block_quantize(scale_columns(w, s, false), block_size);
  auto eff = scale_columns(dequantize(q), s, true);
  return {std::move(q), std::move(eff)};
}

// mean((W - W_eff) X)^2 over all outputs and samples; X is (cols, samples).
inline double output_mse(const Tensor& w, const Tensor& w_eff, const Tensor& x) {
  const auto m = as_matrix(w);
  const std::size_t samples = x.dim(1);
  auto wd = w.data();
  auto ed = w_eff.data();
  auto xd = x.data();
  std::vector<double> diff(m.cols);
  std::vector<double> acc(samples);
  double total = 0.0;
  for (std::size_t r = 0; r < m.rows; ++r) {
    for (std::size_t c = 0; c < m.cols; ++c)
      diff[c] = static_cast<double>(wd[r * m.cols + c]) - static_cast<double>(ed[r * m.cols + c]);
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t c = 0; c < m.cols; ++c) {
      const double dc = diff[c];
      if (dc == 0.0) continue;
      const float* xr = xd.data() + c * samples;
      for (std::size_t k = 0; k < samples; ++k) acc[k] += dc * static_cast<double>(xr[k]);
    }
    for (double v : acc) total += v * v;
  }
  return total / static_cast<double>(m.rows * samples);
}

inline void check_awq_shapes(const Tensor& w, std::span<const float> s, const Tensor& x) {
  const auto m = as_matrix(w);
  if (x.rank() != 2 || x.dim(0) != m.cols) {
    throw ShapeError("AWQ activations must be (" + std::to_string(m.cols) + ", samples), got " +
                     shape_string(x.shape()));
  }
  if (s.size() != m.cols) {
    throw ShapeError("AWQ expects " + std::to_string(m.cols) + " channel scales, got " + std::to_string(s.size()));
  }
}

}  // namespace detail

inline Tensor AwqResult::effective_weights() const {
  return detail::scale_columns(dequantize(qweights), channel_scales, true);
}

inline double awq_loss(const Tensor& w, std::span<const float> s, const Tensor& x, const AwqConfig& cfg) {
  detail::check_awq_shapes(w, s, x);
  const auto cand = detail::awq_quantize_scaled(w, s, cfg.block_size);
  return detail::output_mse(w, cand.effective, x);
}

inline AwqResult awq_search(const Tensor& w, const Tensor& x, const AwqConfig& cfg) {
  cfg.validate();
  const auto m = detail::as_matrix(w);
  if (x.rank() != 2 || x.dim(0) != m.cols) {
    throw ShapeError("AWQ activations must be (" + std::to_string(m.cols) + ", samples), got " +
                     shape_string(x.shape()));
  }
  if (x.dim(1) == 0) throw UsageError("AWQ calibration set is empty");

  std::vector<float> act_amax(m.cols, 0.0f), w_amax(m.cols, 0.0f);
  {
    const std::size_t samples = x.dim(1);
    auto xd = x.data();
    for (std::size_t c = 0; c < m.cols; ++c)
      for (std::size_t k = 0; k < samples; ++k) act_amax[c] = std::max(act_amax[c], std::fabs(xd[c * samples + k]));
    auto wd = w.data();
    for (std::size_t r = 0; r < m.rows; ++r)
      for (std::size_t c = 0; c < m.cols; ++c) w_amax[c] = std::max(w_amax[c], std::fabs(wd[r * m.cols + c]));
  }

  auto loss_of = [&](double alpha) {
    const auto s = awq_channel_scales(alpha, act_amax, w_amax);
    return awq_loss(w, s, x, cfg);
  };

  double best_alpha = 0.0;
  double best_loss = 0.0;
  bool first = true;
  for (std::size_t i = 0;; ++i) {
    const double alpha = std::min(1.0, static_cast<double>(i) * cfg.alpha_grid);
    const double l = loss_of(alpha);
    if (first || l < best_loss) {
      best_alpha = alpha;
      best_loss = l;
      first = false;
    }
    if (alpha >= 1.0) break;
  }

  AwqResult result;

  // Descent on alpha with a central-difference gradient. The loss is
  // normalised by the grid optimum so eta is independent of weight magnitude.
  const double h = cfg.alpha_grid / 10.0;
  const double norm = best_loss > 0.0 ? best_loss : 1.0;
  double alpha = best_alpha;
  double cur = best_loss;
  for (std::size_t it = 0; it < cfg.max_refine_iters && cur > 0.0; ++it) {
    const double hi = std::min(1.0, alpha + h);
    const double lo = std::max(0.0, alpha - h);
    const double grad = (loss_of(hi) - loss_of(lo)) / (hi - lo) / norm;
    const double next = std::clamp(alpha - cfg.eta * grad, 0.0, 1.0);
    if (next == alpha) break;
    const double l = loss_of(next);
    if (l > cur) break;
    alpha = next;
    cur = l;
    result.refine_trace.push_back(l);
  }

  const std::vector<float> unit(m.cols, 1.0f);
  result.unit_scale_loss = awq_loss(w, unit, x, cfg);
  result.alpha_star = alpha;
  if (result.unit_scale_loss < cur) {
    result.channel_scales = unit;
    result.loss_at_alpha = result.unit_scale_loss;
    result.unit_fallback = true;
  } else {
    result.channel_scales = awq_channel_scales(alpha, act_amax, w_amax);
    result.loss_at_alpha = cur;
  }
  result.qweights = detail::awq_quantize_scaled(w, result.channel_scales, cfg.block_size).q;
  return result;
}

}  // namespace qbench
