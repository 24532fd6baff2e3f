#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <vector>

#include "qbench/errors.hpp"
#include "qbench/metrics.hpp"
#include "qbench/nn/graph.hpp"
#include "qbench/reftrain/augment.hpp"
#include "qbench/reftrain/dataset.hpp"
#include "qbench/reftrain/network.hpp"
#include "qbench/rng.hpp"

namespace qbench {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(std::size_t n, AdamConfig cfg) : cfg_(cfg), m_(n, 0.0f), v_(n, 0.0f) {}

  // p -= lr * m_hat / (sqrt(v_hat) + eps)
  void step(std::span<float> params, std::span<const float> grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const auto b1 = static_cast<float>(cfg_.beta1), b2 = static_cast<float>(cfg_.beta2);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const float g = grads[i];
      m_[i] = b1 * m_[i] + (1.0f - b1) * g;
      v_[i] = b2 * v_[i] + (1.0f - b2) * g * g;
      const double mh = m_[i] / bc1, vh = v_[i] / bc2;
      params[i] -= static_cast<float>(cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps));
    }
  }

  std::size_t steps() const { return t_; }

 private:
  AdamConfig cfg_;
  std::vector<float> m_, v_;
  std::size_t t_ = 0;
};

struct TrainConfig {
  std::size_t batch_size = 32;
  double lr = 1e-4;
  std::size_t max_epochs = 150;
  std::size_t patience = 10;
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  bool augment = true;

  void validate() const {
    if (batch_size == 0 || max_epochs == 0 || patience == 0) throw UsageError("training counts must be positive");
    if (patience > max_epochs) throw UsageError("patience cannot exceed the epoch limit");
    if (!(lr >= 0.0)) throw UsageError("learning rate must be non-negative");
  }

  AdamConfig adam() const { return {lr, adam_beta1, adam_beta2, adam_eps}; }
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  MetricsReport train;
  MetricsReport val;
};

struct TrainResult {
  ModelGraph model;  // weights of the best validation-F1 epoch
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  MetricsReport best_val;
};

// Mini-batch Adam on binary cross-entropy over a Network<float>.
class Trainer {
 public:
  Trainer(const ModelGraph& g, const TrainConfig& cfg)
      : cfg_(cfg), net_(g), adam_(net_.parameter_count(), cfg.adam()), grad_(net_.parameter_count()) {
    cfg_.validate();
  }

  // One optimizer step on the given batch with training-mode batch norm.
  // Returns the probabilities of the forward pass; d(BCE)/d(logit) is p - y,
  // averaged over the batch.
  std::vector<double> step(std::span<const Tensor* const> images, std::span<const int> labels) {
    std::fill(grad_.begin(), grad_.end(), 0.0f);
    std::vector<const float*> ptrs;
    for (const Tensor* t : images) ptrs.push_back(t->data().data());
    const auto logits = net_.forward_batch(ptrs, cache_, true);
    std::vector<double> probs(images.size());
    std::vector<float> dlogits(images.size());
    const float inv_n = 1.0f / static_cast<float>(images.size());
    for (std::size_t k = 0; k < images.size(); ++k) {
      const float p = 1.0f / (1.0f + std::exp(-logits[k]));
      probs[k] = p;
      dlogits[k] = (p - static_cast<float>(labels[k])) * inv_n;
    }
    net_.backward(cache_, dlogits, grad_);
    net_.update_running_stats(cache_);
    adam_.step(net_.params(), grad_);
    return probs;
  }

  double predict(const Tensor& image) {
    const float z = net_.forward(image.data(), cache_);
    return 1.0 / (1.0 + std::exp(-static_cast<double>(z)));
  }

  Network<float>& network() { return net_; }
  const Network<float>& network() const { return net_; }

 private:
  TrainConfig cfg_;
  Network<float> net_;
  Adam adam_;
  std::vector<float> grad_;
  Network<float>::Cache cache_;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Trains on `train_idx`, validates on `val_idx` after every epoch, keeps the
// weights of the best validation F1 (earliest on ties) and stops once
// `patience` epochs pass without improvement.
inline TrainResult train(const ModelGraph& model, const Dataset& ds, const std::vector<std::size_t>& train_idx,
                         const std::vector<std::size_t>& val_idx, const TrainConfig& cfg,
                         const EpochCallback& on_epoch = {}) {
  cfg.validate();
  ds.validate();
  if (train_idx.empty() || val_idx.empty()) throw UsageError("training and validation splits must be non-empty");
  Trainer trainer(model, cfg);

  std::vector<int> val_labels;
  for (std::size_t i : val_idx) val_labels.push_back(ds.labels.at(i));

  TrainResult result;
  result.model = model;
  double best_f1 = -1.0;
  std::vector<std::size_t> order = train_idx;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(cfg.seed, 0xE90C0000ull + epoch));
    shuffle_rng.shuffle(order);

    std::vector<double> train_scores;
    std::vector<int> train_labels;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(order.size(), b + cfg.batch_size);
      std::vector<Tensor> batch;
      std::vector<int> labels;
      for (std::size_t k = b; k < e; ++k) {
        const std::size_t idx = order[k];
        if (cfg.augment) {
          Rng aug(derive_seed(cfg.seed, (static_cast<std::uint64_t>(epoch) << 32) ^ idx));
          batch.push_back(augment(ds.images[idx], aug));
        } else {
          batch.push_back(ds.images[idx]);
        }
        labels.push_back(ds.labels[idx]);
      }
      std::vector<const Tensor*> ptrs;
      for (const auto& t : batch) ptrs.push_back(&t);
      const auto probs = trainer.step(ptrs, labels);
      train_scores.insert(train_scores.end(), probs.begin(), probs.end());
      train_labels.insert(train_labels.end(), labels.begin(), labels.end());
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train = evaluate_scores(train_labels, train_scores);
    if (!std::isfinite(rec.train.loss)) throw TrainingError("non-finite training loss", epoch);
    for (float p : trainer.network().params())
      if (!std::isfinite(p)) throw TrainingError("non-finite parameter", epoch);

    std::vector<double> val_scores;
    for (std::size_t i : val_idx) val_scores.push_back(trainer.predict(ds.images[i]));
    rec.val = evaluate_scores(val_labels, val_scores);
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (rec.val.f1 > best_f1) {
      best_f1 = rec.val.f1;
      result.best_epoch = epoch;
      result.best_val = rec.val;
      result.model = trainer.network().to_graph();  // parameters and running statistics together
    }
    if (epoch - result.best_epoch >= cfg.patience) break;
  }

  return result;
}

}  // namespace qbench
