#pragma once

// Reference implementations used only by tests. Each one is written
// differently from the library routine it checks: binary16 by arithmetic on
// doubles instead of bit manipulation, convolution by direct nested loops,
// integer convolution with arbitrary-precision integers, AUC by counting
// ordered pairs.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "qbench/metrics.hpp"
#include "qbench/rng.hpp"
#include "qbench/tensor.hpp"

namespace oracle {

// Nearest binary16 pattern of a float, ties to even, computed from the value.
inline std::uint16_t f32_to_f16(float f) {
  const std::uint16_t sign = std::signbit(f) ? 0x8000 : 0;
  if (std::isnan(f)) return sign | 0x7E00;
  const double x = std::fabs(static_cast<double>(f));
  // 65504 + half an ulp (16) rounds to even, which is infinity.
  if (x >= 65520.0) return sign | 0x7C00;
  if (x < std::ldexp(1.0, -14)) {
    const double n = std::nearbyint(x / std::ldexp(1.0, -24));  // 1024 lands on the smallest normal
    return static_cast<std::uint16_t>(sign | static_cast<std::uint16_t>(n));
  }
  int k = 0;
  std::frexp(x, &k);  // x = m * 2^k, m in [0.5, 1)
  int e = k - 1;
  double n = std::nearbyint(x / std::ldexp(1.0, e - 10));  // in [1024, 2048]
  if (n == 2048.0) {
    n = 1024.0;
    ++e;
  }
  if (e + 15 >= 31) return sign | 0x7C00;
  return static_cast<std::uint16_t>(sign | ((e + 15) << 10) | (static_cast<int>(n) - 1024));
}

inline double f16_to_double(std::uint16_t h) {
  const double s = (h & 0x8000) ? -1.0 : 1.0;
  const int e = (h >> 10) & 0x1F;
  const int m = h & 0x3FF;
  if (e == 0x1F) return m ? std::numeric_limits<double>::quiet_NaN() : s * std::numeric_limits<double>::infinity();
  if (e == 0) return s * std::ldexp(static_cast<double>(m), -24);
  return s * std::ldexp(static_cast<double>(1024 + m), e - 25);
}

// Direct cross-correlation in double with an explicit bounds check per tap.
inline std::vector<double> conv(const std::vector<double>& in, std::size_t c, std::size_t h, std::size_t w,
                                const std::vector<double>& wt, std::size_t oc, std::size_t k, std::size_t stride,
                                std::size_t pad, std::size_t groups, const std::vector<double>& bias) {
  const std::size_t oh = (h + 2 * pad - k) / stride + 1, ow = (w + 2 * pad - k) / stride + 1;
  const std::size_t ipg = c / groups, opg = oc / groups;
  std::vector<double> out(oc * oh * ow, 0.0);
  for (std::size_t o = 0; o < oc; ++o)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        double acc = bias.empty() ? 0.0 : bias[o];
        for (std::size_t i = 0; i < ipg; ++i)
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
              const long iy = static_cast<long>(y * stride + ky) - static_cast<long>(pad);
              const long ix = static_cast<long>(x * stride + kx) - static_cast<long>(pad);
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
              const std::size_t ic = (o / opg) * ipg + i;
              acc += wt[((o * ipg + i) * k + ky) * k + kx] *
                     in[(ic * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)];
            }
        out[(o * oh + y) * ow + x] = acc;
      }
  return out;
}

using BigInt = boost::multiprecision::cpp_int;

inline std::vector<BigInt> conv_int(const std::vector<std::int8_t>& in, std::size_t c, std::size_t h, std::size_t w,
                                    const std::vector<std::int8_t>& wt, std::size_t oc, std::size_t k,
                                    std::size_t stride, std::size_t pad, std::size_t groups) {
  const std::size_t oh = (h + 2 * pad - k) / stride + 1, ow = (w + 2 * pad - k) / stride + 1;
  const std::size_t ipg = c / groups, opg = oc / groups;
  std::vector<BigInt> out(oc * oh * ow);
  for (std::size_t o = 0; o < oc; ++o)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        BigInt acc = 0;
        for (std::size_t i = 0; i < ipg; ++i)
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
              const long iy = static_cast<long>(y * stride + ky) - static_cast<long>(pad);
              const long ix = static_cast<long>(x * stride + kx) - static_cast<long>(pad);
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
              const std::size_t ic = (o / opg) * ipg + i;
              acc += BigInt(wt[((o * ipg + i) * k + ky) * k + kx]) *
                     BigInt(in[(ic * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)]);
            }
        out[(o * oh + y) * ow + x] = acc;
      }
  return out;
}

// P(score_pos > score_neg) + 0.5 P(tie) over all positive/negative pairs.
inline double auc_pairwise(const std::vector<int>& labels, const std::vector<double>& scores) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < labels.size(); ++j) {
      if (labels[j] != 0) continue;
      pairs += 1.0;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

struct Counts {
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
};

inline Counts recount(const std::vector<int>& labels, const std::vector<double>& scores, double threshold) {
  Counts c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool pred = !(scores[i] < threshold);
    if (labels[i] == 1) (pred ? c.tp : c.fn)++;
    else (pred ? c.fp : c.tn)++;
  }
  return c;
}

inline qbench::Tensor random_tensor(qbench::Rng& rng, const qbench::Shape& shape, double lo, double hi) {
  std::vector<float> v(qbench::shape_numel(shape));
  for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return qbench::Tensor(shape, std::move(v));
}

inline qbench::Tensor random_normal(qbench::Rng& rng, const qbench::Shape& shape, double sd) {
  std::vector<float> v(qbench::shape_numel(shape));
  for (auto& x : v) x = static_cast<float>(rng.normal(0.0, sd));
  return qbench::Tensor(shape, std::move(v));
}

}  // namespace oracle
