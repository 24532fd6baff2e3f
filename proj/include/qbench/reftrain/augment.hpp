#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "qbench/rng.hpp"
#include "qbench/tensor.hpp"

namespace qbench {

struct AugmentParams {
  bool flip = false;
  double angle_deg = 0.0;
  double shift_x = 0.0;  // fraction of width
  double shift_y = 0.0;  // fraction of height
  double scale = 1.0;
};

struct AugmentRanges {
  double flip_prob = 0.5;
  double max_angle_deg = 15.0;
  double max_shift = 0.10;
  double min_scale = 0.9;
  double max_scale = 1.1;
};

inline AugmentParams draw_augment(Rng& rng, const AugmentRanges& r = {}) {
  AugmentParams p;
  p.flip = rng.bernoulli(r.flip_prob);
  p.angle_deg = rng.uniform(-r.max_angle_deg, r.max_angle_deg);
  p.shift_x = rng.uniform(-r.max_shift, r.max_shift);
  p.shift_y = rng.uniform(-r.max_shift, r.max_shift);
  p.scale = rng.uniform(r.min_scale, r.max_scale);
  return p;
}

// Horizontal flip, then scale and rotation about the centre, then shift.
// Output pixels are bilinear samples of the inverse-mapped source location,
// with edge clamping, so values stay within the input range.
inline Tensor augment(const Tensor& img, const AugmentParams& p) {
  const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  const double cx = (static_cast<double>(w) - 1.0) / 2.0, cy = (static_cast<double>(h) - 1.0) / 2.0;
  const double th = p.angle_deg * std::numbers::pi / 180.0;
  const double cs = std::cos(th), sn = std::sin(th);
  const double tx = p.shift_x * static_cast<double>(w), ty = p.shift_y * static_cast<double>(h);
  std::vector<float> out(img.numel());
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double qx = static_cast<double>(x) - cx - tx, qy = static_cast<double>(y) - cy - ty;
      double sx = (cs * qx + sn * qy) / p.scale;
      const double sy = (-sn * qx + cs * qy) / p.scale + cy;
      if (p.flip) sx = -sx;
      sx += cx;
      const double fx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
      const double fy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
      const auto x0 = static_cast<std::size_t>(fx), y0 = static_cast<std::size_t>(fy);
      const std::size_t x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
      const double wx = fx - static_cast<double>(x0), wy = fy - static_cast<double>(y0);
      for (std::size_t ch = 0; ch < c; ++ch) {
        auto at = [&](std::size_t yy, std::size_t xx) { return static_cast<double>(img[(ch * h + yy) * w + xx]); };
        const double top = at(y0, x0) + wx * (at(y0, x1) - at(y0, x0));
        const double bot = at(y1, x0) + wx * (at(y1, x1) - at(y1, x0));
        out[(ch * h + y) * w + x] = static_cast<float>(top + wy * (bot - top));
      }
    }
  return Tensor(img.shape(), std::move(out));
}

inline Tensor augment(const Tensor& img, Rng& rng) { return augment(img, draw_augment(rng)); }

}  // namespace qbench
