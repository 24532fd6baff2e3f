#pragma once

#include <cctype>
#include <cstddef>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qbench/awq.hpp"
#include "qbench/errors.hpp"
#include "qbench/harness/bench.hpp"
#include "qbench/harness/dataset_io.hpp"
#include "qbench/harness/model_io.hpp"
#include "qbench/metrics.hpp"
#include "qbench/nn/quantized_model.hpp"
#include "qbench/reftrain/dataset.hpp"

namespace qbench {

struct Evaluation {
  MetricsReport metrics;
  std::vector<double> scores;
};

inline Evaluation evaluate(const QuantizedModel& m, const Dataset& ds) {
  ds.validate();
  if (ds.size() == 0) throw UsageError("evaluation dataset is empty");
  Evaluation e;
  e.scores.reserve(ds.size());
  for (const auto& img : ds.images) e.scores.push_back(static_cast<double>(m.forward(img)));
  e.metrics = evaluate_scores(ds.labels, e.scores);
  return e;
}

struct QuantizeOptions {
  AwqConfig awq;
  std::size_t awq_max_columns = 4096;
};

// Quantizes an FP32 graph to a uniform bit-width. Integer widths fold batch
// norm into the preceding convolution first, then calibrate on `calib`: all
// images for the INT8 activation ranges, the first awq.calib_samples images
// for the INT4 activation-aware search.
inline QuantizedModel quantize_for_bits(const ModelGraph& graph, BitWidth bits, std::span<const Tensor> calib,
                                        const QuantizeOptions& opt = {}) {
  const auto plan = PrecisionPlan::uniform(bits);
  const ModelGraph g = is_integer(bits) ? fold_graph(graph) : graph;
  switch (bits) {
    case BitWidth::fp32:
      return fp32_model(g);
    case BitWidth::fp16:
      return quantize_model(g, {}, plan);
    case BitWidth::int8:
      if (calib.empty()) throw UsageError("INT8 quantization needs calibration data");
      return quantize_model(g, calibrate_model(g, calib), plan);
    case BitWidth::int4: {
      if (calib.empty()) throw UsageError("INT4 quantization needs calibration data");
      opt.awq.validate();
      const auto n = std::min(calib.size(), opt.awq.calib_samples);
      const auto inputs = collect_layer_inputs(g, calib.first(n), opt.awq_max_columns);
      return quantize_model(g, {}, plan, opt.awq, inputs);
    }
  }
  throw UsageError("unknown bit-width");
}

struct ReportRow {
  BitWidth bits = BitWidth::fp32;
  MetricsReport metrics;
  BenchReport bench;
  std::size_t file_bytes = 0;
  std::size_t payload_bytes = 0;
  std::string model_file;  // serialized quantized model
};

struct Report {
  std::vector<ReportRow> rows;
  std::vector<LayerSummaryRow> layers;
};

struct ReportOptions {
  QuantizeOptions quant;
  std::size_t bench_runs = 20;
  std::size_t bench_warmup = 3;
  BenchClock clock = steady_clock_seconds();
};

inline std::string fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

inline std::string amax_range(const LayerSummaryRow& r) { return "[" + fixed4(r.amax_min) + ", " + fixed4(r.amax_max) + "]"; }

inline std::string md_table(const std::vector<std::string>& head, const std::vector<std::vector<std::string>>& rows) {
  auto line = [](const std::vector<std::string>& cells) {
    std::string s = "|";
    for (const auto& c : cells) s += " " + c + " |";
    return s + "\n";
  };
  std::string out = line(head) + "|";
  for (std::size_t i = 0; i < head.size(); ++i) out += "---|";
  out += "\n";
  for (const auto& r : rows) out += line(r);
  return out;
}

inline std::string csv_cell(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

inline std::string csv_table(const std::vector<std::string>& head, const std::vector<std::vector<std::string>>& rows) {
  auto line = [](const std::vector<std::string>& cells) {
    std::string s;
    for (std::size_t i = 0; i < cells.size(); ++i) s += (i ? "," : "") + csv_cell(cells[i]);
    return s + "\n";
  };
  std::string out = line(head);
  for (const auto& r : rows) out += line(r);
  return out;
}

inline const std::vector<std::string>& metrics_header() {
  static const std::vector<std::string> h{"Bit-width", "Loss", "Accuracy", "Precision", "Recall", "F1 Score", "AUC Score"};
  return h;
}

inline std::vector<std::vector<std::string>> metrics_rows(const Report& r) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& row : r.rows) {
    const auto& m = row.metrics;
    rows.push_back({std::string(to_string(row.bits)), fixed4(m.loss), fixed4(m.accuracy), fixed4(m.precision),
                    fixed4(m.recall), fixed4(m.f1), fixed4(m.auc)});
  }
  return rows;
}

inline std::vector<std::vector<std::string>> size_rows(const Report& r, bool csv) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& row : r.rows) {
    std::vector<std::string> cells{std::string(to_string(row.bits)), format_bytes(row.file_bytes),
                                   format_latency(row.bench.mean, row.bench.stddev)};
    if (csv) {
      cells.push_back(std::to_string(row.file_bytes));
      cells.push_back(std::to_string(row.payload_bytes));
      cells.push_back(fixed4(row.bench.mean * 1e3));
      cells.push_back(fixed4(row.bench.stddev * 1e3));
    }
    rows.push_back(std::move(cells));
  }
  return rows;
}

inline std::vector<std::vector<std::string>> layer_rows(const Report& r) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& l : r.layers) rows.push_back({l.name, std::string(to_string(l.bits)), l.method, amax_range(l)});
  return rows;
}

inline std::string model_file_name(BitWidth b) {
  std::string s(to_string(b));
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return "model_" + s + ".qnt";
}

// Writes the three tables as CSV and markdown, plus every quantized model
// file when `with_models` is set.
inline void write_report_files(const Report& r, const std::string& out_dir, bool with_models = false) {
  const fs::path root(out_dir);
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw IoError("cannot create '" + out_dir + "': " + ec.message());
  const auto mrows = metrics_rows(r);
  write_text(root / "metrics.csv", csv_table(metrics_header(), mrows));
  write_text(root / "metrics.md", md_table(metrics_header(), mrows));
  const std::vector<std::string> sh{"Bit-width", "Model Size", "Execution Time"};
  auto sh_csv = sh;
  for (const char* c : {"size_bytes", "payload_bytes", "latency_mean_ms", "latency_std_ms"}) sh_csv.emplace_back(c);
  write_text(root / "size_latency.csv", csv_table(sh_csv, size_rows(r, true)));
  write_text(root / "size_latency.md", md_table(sh, size_rows(r, false)));
  const std::vector<std::string> lh{"Layer Name", "Bit-width", "Quantization Method", "amax Range"};
  write_text(root / "layers.csv", csv_table(lh, layer_rows(r)));
  write_text(root / "layers.md", md_table(lh, layer_rows(r)));
  if (with_models)
    for (const auto& row : r.rows) write_text(root / model_file_name(row.bits), row.model_file);
}

// Quantizes `fp32` to each bit-width, evaluates on `eval`, benchmarks one
// evaluation image and collects the per-layer summary of integer widths.
inline Report build_report(const QuantizedModel& fp32, const Dataset& eval, std::span<const Tensor> calib,
                           std::span<const BitWidth> widths, const ReportOptions& opt = {}) {
  if (fp32.plan != PrecisionPlan::uniform(BitWidth::fp32)) throw UsageError("report expects an FP32 model");
  if (widths.empty()) throw UsageError("report needs at least one bit-width");
  if (eval.size() == 0) throw UsageError("report dataset is empty");
  Report r;
  for (BitWidth b : widths) {
    const QuantizedModel m = quantize_for_bits(fp32.graph, b, calib, opt.quant);
    ReportRow row;
    row.bits = b;
    row.metrics = evaluate(m, eval).metrics;
    row.model_file = serialize(m);
    row.file_bytes = row.model_file.size();
    row.payload_bytes = model_payload_bytes(row.model_file);
    row.bench = bench_latency(m, eval.images.front(), opt.bench_runs, opt.bench_warmup, opt.clock);
    row.bench.model_size_bytes = row.file_bytes;
    r.rows.push_back(std::move(row));
    for (auto& l : layer_summary(m)) r.layers.push_back(std::move(l));
  }
  return r;
}

// File-level entry point: model file, dataset directory, optional separate
// calibration directory (defaults to the evaluation data).
inline Report run_report(const std::string& model_path, const std::string& dataset_dir,
                         std::span<const BitWidth> widths, const std::string& out_dir,
                         const std::optional<std::string>& calib_dir = {}, const ReportOptions& opt = {},
                         bool with_models = false) {
  const QuantizedModel fp32 = load_model(model_path);
  const std::pair<std::size_t, std::size_t> hw{fp32.graph.input.at(1), fp32.graph.input.at(2)};
  const Dataset eval = load_dataset(dataset_dir, hw);
  const Dataset calib = calib_dir ? load_dataset(*calib_dir, hw) : eval;
  Report r = build_report(fp32, eval, calib.images, widths, opt);
  write_report_files(r, out_dir, with_models);
  return r;
}

}  // namespace qbench
