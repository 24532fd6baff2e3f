#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "qbench/errors.hpp"
#include "qbench/rng.hpp"
#include "qbench/tensor.hpp"

namespace qbench {

// Images are CHW in [0, 1]; labels are 1 (pale / positive) or 0.
struct Dataset {
  std::vector<Tensor> images;
  std::vector<int> labels;
  std::vector<std::string> ids;

  std::size_t size() const { return images.size(); }

  void validate() const {
    if (labels.size() != images.size() || ids.size() != images.size())
      throw UsageError("dataset images, labels and ids differ in length");
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] != 0 && labels[i] != 1) throw UsageError("label of '" + ids[i] + "' is not binary");
  }

  Dataset subset(const std::vector<std::size_t>& idx) const {
    Dataset d;
    for (std::size_t i : idx) {
      d.images.push_back(images.at(i));
      d.labels.push_back(labels.at(i));
      d.ids.push_back(ids.at(i));
    }
    return d;
  }

  std::size_t positives() const {
    std::size_t n = 0;
    for (int l : labels) n += l != 0;
    return n;
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct SynthConfig {
  std::size_t n_samples = 600;
  std::size_t image_size = 64;
  double class_balance = 0.6;
  std::uint64_t seed = 0;
  double noise_sigma = 0.05;

  void validate() const {
    if (n_samples < 2) throw UsageError("synthetic dataset needs at least 2 samples");
    if (!(class_balance > 0.0 && class_balance < 1.0)) throw UsageError("class balance must be in (0, 1)");
    if (image_size < 8) throw UsageError("synthetic images must be at least 8x8");
    if (!(noise_sigma >= 0.0)) throw UsageError("noise sigma must be non-negative");
  }
};

// Mean red level of the central ellipse per class; positives are pale.
inline constexpr double kSynthPaleRed = 0.55;
inline constexpr double kSynthHealthyRed = 0.82;

// Skin-toned background with a central elliptical membrane whose red level
// depends on the class, plus per-pixel Gaussian noise.
inline Dataset gen_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  const std::size_t n = cfg.n_samples, s = cfg.image_size;
  const auto n_pos = static_cast<std::size_t>(std::llround(static_cast<double>(n) * cfg.class_balance));
  std::vector<int> labels(n, 0);
  for (std::size_t i = 0; i < n_pos; ++i) labels[i] = 1;
  Rng order(derive_seed(cfg.seed, 0x5EED));
  order.shuffle(labels);

  Dataset ds;
  const double c0 = (static_cast<double>(s) - 1.0) / 2.0;
  for (std::size_t i = 0; i < n; ++i) {
    Rng r(derive_seed(cfg.seed, i + 1));
    const double bg[3] = {0.62 + r.uniform(-0.03, 0.03), 0.42 + r.uniform(-0.03, 0.03), 0.38 + r.uniform(-0.03, 0.03)};
    const double red = (labels[i] ? kSynthPaleRed : kSynthHealthyRed) + r.uniform(-0.04, 0.04);
    const double fg[3] = {red, 0.40 + r.uniform(-0.03, 0.03), 0.40 + r.uniform(-0.03, 0.03)};
    const double cx = c0 + r.uniform(-0.05, 0.05) * static_cast<double>(s);
    const double cy = c0 + r.uniform(-0.05, 0.05) * static_cast<double>(s);
    const double ax = (0.35 + r.uniform(-0.03, 0.03)) * static_cast<double>(s);
    const double ay = (0.25 + r.uniform(-0.03, 0.03)) * static_cast<double>(s);
    std::vector<float> px(3 * s * s);
    for (std::size_t y = 0; y < s; ++y)
      for (std::size_t x = 0; x < s; ++x) {
        const double dx = (static_cast<double>(x) - cx) / ax, dy = (static_cast<double>(y) - cy) / ay;
        const bool inside = dx * dx + dy * dy <= 1.0;
        for (std::size_t c = 0; c < 3; ++c) {
          const double v = (inside ? fg[c] : bg[c]) + r.normal(0.0, cfg.noise_sigma);
          px[(c * s + y) * s + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
      }
    ds.images.emplace_back(Shape{3, s, s}, std::move(px));
    ds.labels.push_back(labels[i]);
    char id[32];
    std::snprintf(id, sizeof id, "img_%05zu", i);
    ds.ids.emplace_back(id);
  }
  return ds;
}

// Bilinear resize of a CHW image with edge clamping.
inline Tensor resize_bilinear(const Tensor& img, std::size_t out_h, std::size_t out_w) {
  if (img.rank() != 3) throw ShapeError("resize expects a CHW image");
  const std::size_t c = img.dim(0), in_h = img.dim(1), in_w = img.dim(2);
  if (in_h == out_h && in_w == out_w) return img;
  std::vector<float> out(c * out_h * out_w);
  const double sy = static_cast<double>(in_h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(in_w) / static_cast<double>(out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(in_h - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, in_h - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(in_w - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, in_w - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t ch = 0; ch < c; ++ch) {
        auto at = [&](std::size_t yy, std::size_t xx) { return static_cast<double>(img[(ch * in_h + yy) * in_w + xx]); };
        const double top = at(y0, x0) + wx * (at(y0, x1) - at(y0, x0));
        const double bot = at(y1, x0) + wx * (at(y1, x1) - at(y1, x0));
        out[(ch * out_h + y) * out_w + x] = static_cast<float>(top + wy * (bot - top));
      }
    }
  }
  return Tensor({c, out_h, out_w}, std::move(out));
}

}  // namespace qbench
