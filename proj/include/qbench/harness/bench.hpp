#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iterator>
#include <string>
#include <vector>

#include "qbench/errors.hpp"
#include "qbench/nn/quantized_model.hpp"
#include "qbench/quant.hpp"

namespace qbench {

// Seconds since an arbitrary epoch. Injectable so tests can use a fake timer.
using BenchClock = std::function<double()>;

inline BenchClock steady_clock_seconds() {
  return [] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
  };
}

struct BenchReport {
  BitWidth bit_width = BitWidth::fp32;
  std::size_t model_size_bytes = 0;
  std::vector<double> samples;  // seconds per forward, warmup excluded
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation
};

inline BenchReport bench_latency(const std::function<void()>& run, std::size_t runs, std::size_t warmup,
                                 const BenchClock& clock = steady_clock_seconds()) {
  if (runs < 10) throw UsageError("benchmark needs at least 10 timed runs");
  if (warmup < 3) throw UsageError("benchmark needs at least 3 warmup runs");
  for (std::size_t i = 0; i < warmup; ++i) run();
  BenchReport r;
  r.samples.reserve(runs);
  for (std::size_t i = 0; i < runs; ++i) {
    const double t0 = clock();
    run();
    r.samples.push_back(clock() - t0);
  }
  double sum = 0.0;
  for (double s : r.samples) sum += s;
  r.mean = sum / static_cast<double>(runs);
  double sq = 0.0;
  for (double s : r.samples) sq += (s - r.mean) * (s - r.mean);
  r.stddev = std::sqrt(sq / static_cast<double>(runs - 1));
  return r;
}

inline BenchReport bench_latency(const QuantizedModel& m, const Tensor& input, std::size_t runs, std::size_t warmup,
                                 const BenchClock& clock = steady_clock_seconds()) {
  volatile float sink = 0.0f;
  auto r = bench_latency([&] { sink = m.forward(input); }, runs, warmup, clock);
  (void)sink;
  r.bit_width = m.plan.default_bits;
  return r;
}

// Three significant digits in the largest unit that keeps the value >= 1:
// 0.0486 -> "48.6 ms", 0.000235 -> "235 μs".
inline std::string format_duration(double seconds) {
  static const struct {
    double scale;
    const char* unit;
  } units[] = {{1.0, "s"}, {1e-3, "ms"}, {1e-6, "μs"}, {1e-9, "ns"}};
  if (!(seconds > 0.0) || !std::isfinite(seconds)) return seconds == 0.0 ? "0 ns" : "nan";
  std::size_t u = 0;
  while (u + 1 < std::size(units) && seconds < units[u].scale) ++u;
  double v = seconds / units[u].scale;
  auto digits_after = [](double x) { return x >= 100.0 ? 0 : x >= 10.0 ? 1 : 2; };
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits_after(v), v);
  // Rounding can carry into the next unit (999.6 μs -> 1.00 ms).
  if (std::strtod(buf, nullptr) >= 1000.0 && u > 0) {
    v = seconds / units[--u].scale;
    std::snprintf(buf, sizeof buf, "%.*f", digits_after(v), v);
  }
  return std::string(buf) + " " + units[u].unit;
}

inline std::string format_latency(double mean_s, double std_s) {
  return format_duration(mean_s) + " ± " + format_duration(std_s);
}

inline std::string format_bytes(std::size_t bytes) {
  char buf[32];
  const double b = static_cast<double>(bytes);
  if (b >= 1e6)
    std::snprintf(buf, sizeof buf, "%.2f MB", b / 1e6);
  else if (b >= 1e3)
    std::snprintf(buf, sizeof buf, "%.2f KB", b / 1e3);
  else
    std::snprintf(buf, sizeof buf, "%zu B", bytes);
  return buf;
}

}  // namespace qbench
