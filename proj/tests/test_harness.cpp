#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "qbench/harness/report.hpp"

using namespace qbench;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::path(testing::TempDir()) / ("qbench_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ModelGraph small_model(std::uint64_t seed) { return build_mini_mobilenet(0.25, 2, {3, 16, 16}, seed); }

Dataset small_dataset(std::uint64_t seed, std::size_t n, std::size_t size) {
  SynthConfig sc;
  sc.n_samples = n;
  sc.image_size = size;
  sc.seed = seed;
  return gen_synthetic(sc);
}

std::map<BitWidth, QuantizedModel> all_widths(const ModelGraph& g, const std::vector<Tensor>& calib) {
  std::map<BitWidth, QuantizedModel> out;
  for (BitWidth b : {BitWidth::fp32, BitWidth::fp16, BitWidth::int8, BitWidth::int4})
    out.emplace(b, quantize_for_bits(g, b, calib));
  return out;
}

// Clock that advances by a fixed step on every reading.
BenchClock stepping_clock(double step) {
  auto t = std::make_shared<double>(0.0);
  return [t, step] {
    const double now = *t;
    *t += step;
    return now;
  };
}

}  // namespace

TEST(ModelFile, RoundTripIsExactForEveryWidth) {
  const ModelGraph g = small_model(1);
  const Dataset ds = small_dataset(2, 6, 16);
  for (const auto& [bits, m] : all_widths(g, ds.images)) {
    const std::string bytes = serialize(m);
    const QuantizedModel back = deserialize(bytes);
    EXPECT_EQ(back, m) << to_string(bits);
    EXPECT_EQ(serialize(back), bytes) << to_string(bits);
    for (const auto& img : ds.images) EXPECT_EQ(back.forward(img), m.forward(img));
  }
}

TEST(ModelFile, SaveLoadThroughDisk) {
  const auto dir = scratch("model_io");
  const QuantizedModel m = fp32_model(small_model(3));
  const std::string path = (dir / "m.qnt").string();
  save_model(m, path);
  const QuantizedModel back = load_model(path);
  EXPECT_EQ(back, m);
  save_model(back, (dir / "m2.qnt").string());
  EXPECT_EQ(read_file(path), read_file((dir / "m2.qnt").string()));
  EXPECT_THROW(load_model((dir / "missing.qnt").string()), IoError);
}

TEST(ModelFile, CorruptionIsRejected) {
  const std::string bytes = serialize(fp32_model(small_model(4)));
  std::string bad = bytes;
  bad[0] = 'X';
  try {
    deserialize(bad);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
  std::string ver = bytes;
  ver[4] = 9;
  EXPECT_THROW(deserialize(ver), FormatError);
  for (std::size_t cut : {std::size_t{3}, std::size_t{8}, std::size_t{40}, bytes.size() / 2, bytes.size() - 1})
    EXPECT_THROW(deserialize(std::string_view(bytes).substr(0, cut)), FormatError) << cut;
  EXPECT_THROW(deserialize(bytes + "x"), FormatError);
}

TEST(ModelFile, SizeRatios) {
  const ModelGraph g = build_mini_mobilenet(0.5, 5, {3, 32, 32}, 5);
  const Dataset ds = small_dataset(3, 4, 32);
  const auto ms = all_widths(g, ds.images);
  const std::string f32 = serialize(ms.at(BitWidth::fp32)), f16 = serialize(ms.at(BitWidth::fp16));
  const std::string i8 = serialize(ms.at(BitWidth::int8));
  const double r16 = double(model_payload_bytes(f16)) / double(model_payload_bytes(f32));
  const double r8 = double(model_payload_bytes(i8)) / double(model_payload_bytes(f32));
  EXPECT_DOUBLE_EQ(r16, 0.5);
  EXPECT_GE(r8, 0.24);
  EXPECT_LE(r8, 0.30);
  EXPECT_LE(std::fabs(double(f16.size()) - double(f32.size()) / 2), 4096.0);
}

TEST(Ppm, DecodeValues) {
  const std::string ppm = std::string("P6\n# comment\n1 1\n255\n") + char(128) + char(0) + char(255);
  const Tensor t = decode_ppm(ppm, "x.ppm");
  EXPECT_EQ(t.shape(), (Shape{3, 1, 1}));
  EXPECT_EQ(t[0], 128.0f / 255.0f);
  EXPECT_EQ(t[1], 0.0f);
  EXPECT_EQ(t[2], 1.0f);
  const std::string wide = std::string("P6 1 1 65535 ") + char(0x80) + char(0) + char(0) + char(0) + char(0xFF) + char(0xFF);
  const Tensor w = decode_ppm(wide, "w.ppm");
  EXPECT_EQ(w[0], float(32768.0 / 65535.0));
  EXPECT_EQ(w[2], 1.0f);
}

TEST(Ppm, MalformedNamesTheFile) {
  for (const std::string& bad : {std::string("P5\n1 1\n255\nabc"), std::string("P6\n1 1\n255\nab"),
                                std::string("P6\n0 1\n255\n"), std::string("P6\n1 1\n70000\nabc")}) {
    try {
      decode_ppm(bad, "broken.ppm");
      FAIL() << bad;
    } catch (const IngestionError& e) {
      EXPECT_EQ(e.file(), "broken.ppm");
    }
  }
}

TEST(Ppm, EncodeDecodeRoundTrip) {
  Rng rng(1);
  std::vector<float> v(3 * 4 * 5);
  for (auto& x : v) x = static_cast<float>(rng.below(256)) / 255.0f;
  const Tensor img({3, 4, 5}, v);
  EXPECT_EQ(decode_ppm(encode_ppm(img), "r.ppm"), img);
}

TEST(DatasetDir, TwoImageFixture) {
  const auto dir = scratch("fixture");
  Dataset ds = small_dataset(1, 2, 8);
  save_dataset(ds, dir.string());
  const Dataset back = load_dataset(dir.string());
  EXPECT_EQ(back.ids, ds.ids);
  EXPECT_EQ(back.labels, ds.labels);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_LE(max_abs_diff(back.images[i], ds.images[i]), 0.5f / 255.0f + 1e-6f);
  const Dataset resized = load_dataset(dir.string(), std::pair<std::size_t, std::size_t>{4, 6});
  EXPECT_EQ(resized.images[0].shape(), (Shape{3, 4, 6}));
}

TEST(DatasetDir, OrphanAndMissingFiles) {
  const auto dir = scratch("orphans");
  save_dataset(small_dataset(1, 2, 8), dir.string());
  write_text(dir / "stray.ppm", encode_ppm(Tensor({3, 2, 2})));
  try {
    load_dataset(dir.string());
    FAIL();
  } catch (const IngestionError& e) {
    EXPECT_NE(e.file().find("stray.ppm"), std::string::npos);
  }
  fs::remove(dir / "stray.ppm");
  fs::remove(dir / "img_00001.ppm");
  try {
    load_dataset(dir.string());
    FAIL();
  } catch (const IngestionError& e) {
    EXPECT_NE(e.file().find("img_00001.ppm"), std::string::npos);
  }
  EXPECT_THROW(load_dataset((dir / "nope").string()), IngestionError);
}

TEST(Labels, Parsing) {
  const auto rows = parse_labels("id,label,score\na,1,0.25\r\nb,0\n\n", "labels.csv");
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].label, 1);
  EXPECT_EQ(*rows[0].score, 0.25);
  EXPECT_FALSE(rows[1].score);
  EXPECT_THROW(parse_labels("a,2\n", "l"), IngestionError);
  EXPECT_THROW(parse_labels("a,1\na,0\n", "l"), IngestionError);
  EXPECT_THROW(parse_labels("a,1,zz\n", "l"), IngestionError);
  EXPECT_THROW(parse_labels("id,label\n", "l"), IngestionError);
}

TEST(Bench, InjectedClock) {
  int calls = 0;
  const auto r = bench_latency([&] { ++calls; }, 12, 4, stepping_clock(0.046875));
  EXPECT_EQ(calls, 16);
  ASSERT_EQ(r.samples.size(), 12u);
  // Every timed run spans exactly one clock step; a dyadic step keeps the
  // subtraction exact.
  for (double s : r.samples) EXPECT_EQ(s, 0.046875);
  EXPECT_EQ(r.mean, 0.046875);
  EXPECT_EQ(r.stddev, 0.0);
  EXPECT_THROW(bench_latency([] {}, 9, 3), UsageError);
  EXPECT_THROW(bench_latency([] {}, 10, 2), UsageError);
}

TEST(Bench, ModelOverloadRecordsWidth) {
  const auto m = quantize_for_bits(small_model(6), BitWidth::fp16, {});
  const auto r = bench_latency(m, Tensor(m.graph.input), 10, 3);
  EXPECT_EQ(r.bit_width, BitWidth::fp16);
  EXPECT_EQ(r.samples.size(), 10u);
  EXPECT_GT(r.mean, 0.0);
}

TEST(Format, Durations) {
  EXPECT_EQ(format_latency(0.0486, 0.000235), "48.6 ms ± 235 μs");
  EXPECT_EQ(format_latency(0.0374, 0.00101), "37.4 ms ± 1.01 ms");
  EXPECT_EQ(format_duration(0.0), "0 ns");
  EXPECT_EQ(format_duration(0.0009996), "1.00 ms");
  EXPECT_EQ(format_duration(2.5), "2.50 s");
  EXPECT_EQ(format_duration(4.2e-8), "42.0 ns");
  EXPECT_EQ(format_bytes(9130000), "9.13 MB");
  EXPECT_EQ(format_bytes(4610), "4.61 KB");
  EXPECT_EQ(format_bytes(12), "12 B");
}

TEST(Format, Tables) {
  EXPECT_EQ(csv_cell("a,b"), "\"a,b\"");
  EXPECT_EQ(csv_cell("x\"y"), "\"x\"\"y\"");
  EXPECT_EQ(md_table({"A", "B"}, {{"1", "2"}}), "| A | B |\n|---|---|\n| 1 | 2 |\n");
  EXPECT_EQ(csv_table({"A", "B"}, {{"1", "2"}}), "A,B\n1,2\n");
  EXPECT_EQ(amax_range({"features.0.0", BitWidth::int8, "Per-axis", 0.0039f, 1.4840f}), "[0.0039, 1.4840]");
}

TEST(Report, FourRowsAndDirectEvaluation) {
  const ModelGraph g = small_model(7);
  const Dataset eval = small_dataset(8, 12, 16);
  const Dataset calib = small_dataset(9, 6, 16);
  const QuantizedModel fp32 = fp32_model(g);
  const BitWidth widths[] = {BitWidth::fp32, BitWidth::fp16, BitWidth::int8, BitWidth::int4};
  ReportOptions opt;
  opt.bench_runs = 10;
  opt.clock = stepping_clock(0.0009765625);
  const Report r = build_report(fp32, eval, calib.images, widths, opt);
  ASSERT_EQ(r.rows.size(), 4u);
  const auto direct = evaluate(fp32, eval).metrics;
  EXPECT_EQ(r.rows[0].metrics.f1, direct.f1);
  EXPECT_EQ(r.rows[0].metrics.loss, direct.loss);
  EXPECT_EQ(r.rows[0].metrics.auc, direct.auc);
  for (const auto& row : r.rows) {
    EXPECT_TRUE(std::isfinite(row.metrics.loss));
    EXPECT_GT(row.file_bytes, row.payload_bytes);
  }
  ASSERT_FALSE(r.layers.empty());
  const auto lrows = layer_rows(r);
  EXPECT_EQ(lrows[0][0], "features.0.0");
  EXPECT_EQ(lrows[0][1], "INT8");
  EXPECT_EQ(lrows[0][2], "Per-axis");
  EXPECT_EQ(lrows[0][3].front(), '[');

  const auto dir = scratch("report");
  write_report_files(r, dir.string());
  for (const char* f : {"metrics.csv", "metrics.md", "size_latency.csv", "size_latency.md", "layers.csv", "layers.md"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  const std::string csv = read_text(dir / "metrics.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "Bit-width,Loss,Accuracy,Precision,Recall,F1 Score,AUC Score");
  // Every numeric cell of the CSV appears verbatim in the markdown table.
  const std::string md = read_text(dir / "metrics.md");
  for (const auto& row : metrics_rows(r))
    for (const auto& cell : row) EXPECT_NE(md.find("| " + cell + " |"), std::string::npos);
  const std::string sl = read_text(dir / "size_latency.md");
  EXPECT_NE(sl.find("977 μs ± 0 ns"), std::string::npos);

  EXPECT_THROW(quantize_for_bits(g, BitWidth::int8, {}), UsageError);
  EXPECT_THROW(build_report(quantize_for_bits(g, BitWidth::fp16, {}), eval, calib.images, widths, opt), UsageError);
}

TEST(Report, FileEntryPoint) {
  const auto dir = scratch("run_report");
  const ModelGraph g = small_model(10);
  save_model(fp32_model(g), (dir / "m.qnt").string());
  save_dataset(small_dataset(11, 6, 20), (dir / "data").string());
  const BitWidth widths[] = {BitWidth::fp32, BitWidth::int8};
  ReportOptions opt;
  opt.bench_runs = 10;
  const Report r = run_report((dir / "m.qnt").string(), (dir / "data").string(), widths, (dir / "out").string(), {}, opt);
  EXPECT_EQ(r.rows.size(), 2u);
  EXPECT_TRUE(fs::exists(dir / "out" / "layers.md"));
}
