// qbench command-line driver: data generation, training, quantization,
// evaluation, benchmarking and report emission.

#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "qbench/qbench.hpp"

namespace {

using namespace qbench;

struct GenDataArgs {
  std::size_t n = 600;
  std::uint64_t seed = 0;
  std::size_t size = 64;
  double balance = 0.6;
  std::string out;
};

struct TrainArgs {
  std::string data, out, history;
  std::size_t folds = 5, fold = 0;
  bool all_folds = false;
  std::uint64_t seed = 0;
  double width_mult = 0.5;
  std::size_t blocks = 5, input_size = 32;
  TrainConfig cfg;
  bool no_augment = false, quiet = false;
};

struct QuantizeArgs {
  std::string model, bits, calib, out;
  std::size_t block_size = 128;
  double alpha_step = 0.05;
};

struct EvalArgs {
  std::string model, data, out;
};

struct BenchArgs {
  std::string model, data;
  std::size_t runs = 50, warmup = 5;
};

struct ReportArgs {
  std::string model, data, bits = "fp32,fp16,int8,int4", out, calib;
  std::size_t runs = 20, warmup = 3, block_size = 128;
  double alpha_step = 0.05;
  bool save_models = false;
};

std::pair<std::size_t, std::size_t> model_hw(const QuantizedModel& m) {
  return {m.graph.input.at(1), m.graph.input.at(2)};
}

std::vector<BitWidth> parse_bit_list(const std::string& s) {
  std::vector<BitWidth> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(parse_bit_width(item));
  if (out.empty()) throw UsageError("no bit-widths given");
  return out;
}

void print_metrics_row(BitWidth b, const MetricsReport& m) {
  std::printf("%-5s loss %.4f  acc %.4f  prec %.4f  rec %.4f  f1 %.4f  auc %.4f\n", std::string(to_string(b)).c_str(),
              m.loss, m.accuracy, m.precision, m.recall, m.f1, m.auc);
}

void run_gen_data(const GenDataArgs& a) {
  SynthConfig sc;
  sc.n_samples = a.n;
  sc.seed = a.seed;
  sc.image_size = a.size;
  sc.class_balance = a.balance;
  const Dataset ds = gen_synthetic(sc);
  save_dataset(ds, a.out);
  std::printf("wrote %zu images (%zu positive) to %s\n", ds.size(), ds.positives(), a.out.c_str());
}

void run_train(TrainArgs a) {
  TrainOptions opt;
  opt.folds = a.folds;
  opt.fold = a.fold;
  opt.all_folds = a.all_folds;
  opt.seed = a.seed;
  opt.width_mult = a.width_mult;
  opt.blocks = a.blocks;
  opt.input_size = a.input_size;
  opt.cfg = a.cfg;
  opt.cfg.augment = !a.no_augment;

  std::string history = "fold,epoch,train_loss,train_accuracy,train_precision,train_recall,train_f1,train_auc,"
                        "val_loss,val_accuracy,val_precision,val_recall,val_f1,val_auc\n";
  auto on_epoch = [&](std::size_t f, const EpochRecord& e) {
    char buf[512];
    const auto &t = e.train, &v = e.val;
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", f, e.epoch,
                  t.loss, t.accuracy, t.precision, t.recall, t.f1, t.auc, v.loss, v.accuracy, v.precision, v.recall,
                  v.f1, v.auc);
    history += buf;
    if (!a.quiet)
      std::printf("fold %zu epoch %3zu  train loss %.4f f1 %.4f  val loss %.4f f1 %.4f\n", f, e.epoch, t.loss, t.f1,
                  v.loss, v.f1);
  };
  const TrainedModel best = train_from_dir(a.data, opt, on_epoch);
  save_model(best.model, a.out);
  if (!a.history.empty()) write_text(a.history, history);
  std::printf("saved fold %zu model (best epoch %zu, val f1 %.4f) to %s\n", best.fold, best.result.best_epoch,
              best.result.best_val.f1, a.out.c_str());
}

void run_quantize(const QuantizeArgs& a) {
  const QuantizedModel src = load_model(a.model);
  if (src.plan != PrecisionPlan::uniform(BitWidth::fp32)) throw UsageError("quantize expects an FP32 model");
  const BitWidth b = parse_bit_width(a.bits);
  Dataset calib;
  if (is_integer(b)) {
    if (a.calib.empty()) throw UsageError("--calib is required for integer bit-widths");
    calib = load_dataset(a.calib, model_hw(src));
  }
  QuantizeOptions opt;
  opt.awq.block_size = a.block_size;
  opt.awq.alpha_grid = a.alpha_step;
  const QuantizedModel q = quantize_for_bits(src.graph, b, calib.images, opt);
  save_model(q, a.out);
  std::printf("saved %s model to %s\n", std::string(to_string(b)).c_str(), a.out.c_str());
  for (const auto& r : layer_summary(q))
    std::printf("  %-24s %s %-10s %s\n", r.name.c_str(), std::string(to_string(r.bits)).c_str(), r.method.c_str(),
                amax_range(r).c_str());
}

void run_eval(const EvalArgs& a) {
  const QuantizedModel m = load_model(a.model);
  const Dataset ds = load_dataset(a.data, model_hw(m));
  const auto e = evaluate(m, ds);
  Report r;
  r.rows.push_back({m.plan.default_bits, e.metrics, {}, 0, 0, {}});
  write_text(a.out, csv_table(metrics_header(), metrics_rows(r)));
  print_metrics_row(m.plan.default_bits, e.metrics);
}

void run_bench(const BenchArgs& a) {
  const std::string bytes = read_file(a.model);
  const QuantizedModel m = deserialize(bytes);
  Tensor input;
  if (!a.data.empty()) {
    input = load_dataset(a.data, model_hw(m)).images.at(0);
  } else {
    SynthConfig sc;
    sc.n_samples = 2;
    sc.image_size = m.graph.input.at(1);
    input = gen_synthetic(sc).images[0];
    if (input.shape() != m.graph.input) input = resize_bilinear(input, m.graph.input[1], m.graph.input[2]);
  }
  const auto r = bench_latency(m, input, a.runs, a.warmup);
  std::printf("%s | %s | %s\n", std::string(to_string(m.plan.default_bits)).c_str(), format_bytes(bytes.size()).c_str(),
              format_latency(r.mean, r.stddev).c_str());
}

void run_report_cmd(const ReportArgs& a) {
  const auto widths = parse_bit_list(a.bits);
  ReportOptions opt;
  opt.bench_runs = a.runs;
  opt.bench_warmup = a.warmup;
  opt.quant.awq.block_size = a.block_size;
  opt.quant.awq.alpha_grid = a.alpha_step;
  const auto calib = a.calib.empty() ? std::optional<std::string>{} : std::optional<std::string>{a.calib};
  const Report r = run_report(a.model, a.data, widths, a.out, calib, opt, a.save_models);
  for (const auto& row : r.rows) print_metrics_row(row.bits, row.metrics);
  std::printf("report written to %s\n", a.out.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Post-training quantization benchmark toolkit"};
  app.require_subcommand(1);

  GenDataArgs gd;
  auto* c_gen = app.add_subcommand("gen-data", "Generate the synthetic two-class image dataset");
  c_gen->add_option("--n", gd.n, "Number of images")->capture_default_str();
  c_gen->add_option("--seed", gd.seed, "Generator seed")->capture_default_str();
  c_gen->add_option("--size", gd.size, "Square image size")->capture_default_str();
  c_gen->add_option("--balance", gd.balance, "Fraction of positive images")->capture_default_str();
  c_gen->add_option("--out", gd.out, "Output directory")->required();

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Train the FP32 mini MobileNet");
  c_train->add_option("--data", tr.data, "Dataset directory")->required();
  c_train->add_option("--out", tr.out, "Output model file")->required();
  c_train->add_option("--folds", tr.folds, "Cross-validation folds")->capture_default_str();
  c_train->add_option("--fold", tr.fold, "Held-out fold to train against")->capture_default_str();
  c_train->add_flag("--all-folds", tr.all_folds, "Train every fold and keep the best validation F1");
  c_train->add_option("--seed", tr.seed, "Seed for init, splits, shuffling and augmentation")->capture_default_str();
  c_train->add_option("--width-mult", tr.width_mult, "Channel width multiplier")->capture_default_str();
  c_train->add_option("--blocks", tr.blocks, "Depthwise-separable blocks")->capture_default_str();
  c_train->add_option("--input-size", tr.input_size, "Model input resolution")->capture_default_str();
  c_train->add_option("--epochs", tr.cfg.max_epochs, "Maximum epochs")->capture_default_str();
  c_train->add_option("--patience", tr.cfg.patience, "Early-stopping patience")->capture_default_str();
  c_train->add_option("--lr", tr.cfg.lr, "Adam learning rate")->capture_default_str();
  c_train->add_option("--batch", tr.cfg.batch_size, "Batch size")->capture_default_str();
  c_train->add_flag("--no-augment", tr.no_augment, "Disable flip/rotate/shift/scale augmentation");
  c_train->add_option("--history", tr.history, "Write per-epoch history CSV");
  c_train->add_flag("--quiet", tr.quiet, "Only print the summary");

  QuantizeArgs qa;
  auto* c_q = app.add_subcommand("quantize", "Quantize an FP32 model to one bit-width");
  c_q->add_option("--model", qa.model, "FP32 model file")->required();
  c_q->add_option("--bits", qa.bits, "fp32, fp16, int8 or int4")->required();
  c_q->add_option("--calib", qa.calib, "Calibration dataset directory");
  c_q->add_option("--block-size", qa.block_size, "INT4 block size")->capture_default_str();
  c_q->add_option("--alpha-step", qa.alpha_step, "AWQ alpha grid step")->capture_default_str();
  c_q->add_option("--out", qa.out, "Output model file")->required();

  EvalArgs ea;
  auto* c_eval = app.add_subcommand("eval", "Evaluate a model on a labelled dataset");
  c_eval->add_option("--model", ea.model, "Model file")->required();
  c_eval->add_option("--data", ea.data, "Dataset directory")->required();
  c_eval->add_option("--out", ea.out, "Metrics CSV")->required();

  BenchArgs ba;
  auto* c_bench = app.add_subcommand("bench", "Measure single-image forward latency");
  c_bench->add_option("--model", ba.model, "Model file")->required();
  c_bench->add_option("--runs", ba.runs, "Timed runs (>= 10)")->capture_default_str();
  c_bench->add_option("--warmup", ba.warmup, "Warmup runs (>= 3)")->capture_default_str();
  c_bench->add_option("--data", ba.data, "Take the input image from this dataset");

  ReportArgs ra;
  auto* c_rep = app.add_subcommand("report", "Quantize, evaluate and benchmark at several bit-widths");
  c_rep->add_option("--model", ra.model, "FP32 model file")->required();
  c_rep->add_option("--data", ra.data, "Evaluation dataset directory")->required();
  c_rep->add_option("--bits", ra.bits, "Comma-separated bit-widths")->capture_default_str();
  c_rep->add_option("--out", ra.out, "Report directory")->required();
  c_rep->add_option("--calib", ra.calib, "Calibration dataset directory (default: --data)");
  c_rep->add_option("--runs", ra.runs, "Timed runs per bit-width")->capture_default_str();
  c_rep->add_option("--warmup", ra.warmup, "Warmup runs per bit-width")->capture_default_str();
  c_rep->add_option("--block-size", ra.block_size, "INT4 block size")->capture_default_str();
  c_rep->add_option("--alpha-step", ra.alpha_step, "AWQ alpha grid step")->capture_default_str();
  c_rep->add_flag("--save-models", ra.save_models, "Also write each quantized model file into --out");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ErrorCategory::usage);
  }

  try {
    if (*c_gen) run_gen_data(gd);
    else if (*c_train) run_train(tr);
    else if (*c_q) run_quantize(qa);
    else if (*c_eval) run_eval(ea);
    else if (*c_bench) run_bench(ba);
    else if (*c_rep) run_report_cmd(ra);
  } catch (const qbench::Error& e) {
    std::cerr << "error [" << category_name(e.category()) << "]: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
