#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>

#include "qbench/errors.hpp"
#include "qbench/harness/dataset_io.hpp"
#include "qbench/nn/graph.hpp"
#include "qbench/nn/quantized_model.hpp"
#include "qbench/reftrain/kfold.hpp"
#include "qbench/reftrain/train.hpp"

namespace qbench {

// Everything the `train` command needs besides the data itself.
struct TrainOptions {
  std::size_t folds = 5;
  std::size_t fold = 0;
  bool all_folds = false;
  std::uint64_t seed = 0;
  double width_mult = 0.5;
  std::size_t blocks = 5;
  std::size_t input_size = 32;
  TrainConfig cfg;  // cfg.seed is overwritten by `seed`
};

struct TrainedModel {
  QuantizedModel model;  // FP32 plan over the best fold's weights
  TrainResult result;
  std::size_t fold = 0;
};

using FoldEpochCallback = std::function<void(std::size_t fold, const EpochRecord&)>;

// Stratified k-fold split, seeded initialisation, training of one fold (or
// every fold, keeping the highest validation F1). `ds` must already be at the
// model input resolution.
inline TrainedModel train_folds(const Dataset& ds, const TrainOptions& opt, const FoldEpochCallback& on_epoch = {}) {
  if (opt.fold >= opt.folds) throw UsageError("fold index must be below the fold count");
  const Shape input{3, opt.input_size, opt.input_size};
  for (const auto& img : ds.images)
    if (img.shape() != input) throw ShapeError("training image " + shape_string(img.shape()) + " is not " + shape_string(input));
  const auto splits = kfold_split(ds.size(), opt.folds, opt.seed, ds.labels);
  const ModelGraph init = build_mini_mobilenet(opt.width_mult, opt.blocks, input, derive_seed(opt.seed, 0x1417));
  TrainConfig cfg = opt.cfg;
  cfg.seed = opt.seed;

  std::optional<TrainedModel> best;
  const std::size_t first = opt.all_folds ? 0 : opt.fold, last = opt.all_folds ? opt.folds : opt.fold + 1;
  for (std::size_t f = first; f < last; ++f) {
    EpochCallback cb;
    if (on_epoch) cb = [&](const EpochRecord& e) { on_epoch(f, e); };
    TrainResult r = train(init, ds, splits[f].train, splits[f].val, cfg, cb);
    if (!best || r.best_val.f1 > best->result.best_val.f1) best = TrainedModel{{}, std::move(r), f};
  }
  best->model = fp32_model(best->result.model);
  return std::move(*best);
}

inline TrainedModel train_from_dir(const std::string& data_dir, const TrainOptions& opt,
                                   const FoldEpochCallback& on_epoch = {}) {
  return train_folds(load_dataset(data_dir, std::pair{opt.input_size, opt.input_size}), opt, on_epoch);
}

}  // namespace qbench
