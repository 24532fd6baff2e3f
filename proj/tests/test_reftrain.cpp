#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "qbench/reftrain/augment.hpp"
#include "qbench/reftrain/dataset.hpp"
#include "qbench/reftrain/kfold.hpp"
#include "qbench/reftrain/network.hpp"
#include "qbench/reftrain/train.hpp"

using namespace qbench;


TEST(Network, InferenceMatchesGraphForward) {
  const ModelGraph g = gradcheck::random_graph(1);
  Network<float> net(g);
  Rng rng(1);
  const Tensor img = oracle::random_tensor(rng, g.input, 0, 1);
  typename Network<float>::Cache cache;
  const float z = net.forward(img.data(), cache);
  const float p = 1.0f / (1.0f + std::exp(-z));
  EXPECT_NEAR(p, forward_fp32(g, img), 1e-6f);
  EXPECT_EQ(net.parameter_count(), parameter_count(g));
  EXPECT_EQ(net.to_graph(), g);
}

TEST(Network, GradientsMatchFiniteDifferencesTraining) {
  std::map<LayerKind, int> checked;
  for (std::uint64_t s = 0; s < 20; ++s)
    for (const auto& c : gradcheck::run(100 + s, true)) {
      EXPECT_LE(c.worst_rel, 1e-3) << c.layer << " seed " << s;
      checked[c.kind]++;
    }
  for (auto k : {LayerKind::conv2d, LayerKind::depthwise_conv2d, LayerKind::batch_norm, LayerKind::dense})
    EXPECT_GE(checked[k], 20) << to_string(k);
}

TEST(Network, GradientsMatchFiniteDifferencesInference) {
  for (std::uint64_t s = 0; s < 20; ++s)
    for (const auto& c : gradcheck::run(500 + s, false)) EXPECT_LE(c.worst_rel, 1e-3) << c.layer << " seed " << s;
}

TEST(Network, RunningStatsUpdate) {
  const ModelGraph g = build_mini_mobilenet(0.125, 1, {3, 6, 6}, 3);
  Network<double> net(g, 0.1);
  Rng rng(2);
  std::vector<std::vector<double>> ims(4, std::vector<double>(shape_numel(g.input)));
  for (auto& im : ims)
    for (auto& v : im) v = rng.uniform();
  std::vector<const double*> ptrs;
  for (const auto& im : ims) ptrs.push_back(im.data());
  typename Network<double>::Cache cache;
  net.forward_batch(ptrs, cache, true);
  net.update_running_stats(cache);
  const ModelGraph after = net.to_graph();
  // First batch norm: channel 0 batch mean of the stem output.
  const auto& conv = g.layers[0];
  const auto& bn = after.layers[1];
  ASSERT_EQ(bn.kind, LayerKind::batch_norm);
  std::vector<double> vals;
  for (const auto& im : ims) {
    Tensor x(g.input, std::vector<float>(im.begin(), im.end()));
    const Tensor y = conv2d(x, conv);
    const std::size_t plane = y.dim(1) * y.dim(2);
    for (std::size_t i = 0; i < plane; ++i) vals.push_back(y[i]);
  }
  double mean = 0, var = 0;
  for (double v : vals) mean += v;
  mean /= double(vals.size());
  for (double v : vals) var += (v - mean) * (v - mean);
  var /= double(vals.size() - 1);
  EXPECT_NEAR(bn.mean[0], 0.1 * mean, 1e-6);
  EXPECT_NEAR(bn.var[0], 0.9 + 0.1 * var, 1e-6);
}

TEST(Adam, SingleStepOnQuadratic) {
  // f(p) = p^2 / 2 at p = 1: g = 1, m_hat = 1, v_hat = 1.
  AdamConfig cfg;
  cfg.lr = 0.01;
  Adam opt(1, cfg);
  std::vector<float> p{1.0f};
  const std::vector<float> g{1.0f};
  opt.step(p, g);
  EXPECT_NEAR(p[0], 1.0 - 0.01 / (1.0 + 1e-8), 1e-7);
  EXPECT_EQ(opt.steps(), 1u);
}

TEST(Adam, ZeroLearningRateKeepsParams) {
  Adam opt(3, AdamConfig{0.0, 0.9, 0.999, 1e-8});
  std::vector<float> p{1, -2, 3};
  const auto before = p;
  for (int i = 0; i < 10; ++i) opt.step(p, std::vector<float>{0.3f, -1.0f, 5.0f});
  EXPECT_EQ(p, before);
}

TEST(Train, ConfigValidation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.patience = 200;
  EXPECT_THROW(c.validate(), UsageError);
  c = {};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), UsageError);
  c = {};
  c.lr = -1;
  EXPECT_THROW(c.validate(), UsageError);
}

TEST(Train, FixedBatchLossMostlyDecreases) {
  SynthConfig sc;
  sc.n_samples = 32;
  sc.image_size = 32;
  sc.seed = 4;
  const Dataset ds = gen_synthetic(sc);
  const ModelGraph g = build_mini_mobilenet(0.5, 2, {3, 32, 32}, 11);
  TrainConfig cfg;
  Trainer tr(g, cfg);
  std::vector<const Tensor*> ptrs;
  for (const auto& im : ds.images) ptrs.push_back(&im);
  double prev = INFINITY;
  int violations = 0;
  for (int s = 0; s < 11; ++s) {
    const auto probs = tr.step(ptrs, ds.labels);
    const double loss = bce_loss(ds.labels, probs);
    if (loss > prev) ++violations;
    prev = loss;
  }
  EXPECT_LE(violations, 2);
}

TEST(Train, ZeroLearningRateAndEarliestTie) {
  SynthConfig sc;
  sc.n_samples = 40;
  sc.image_size = 16;
  sc.seed = 5;
  const Dataset ds = gen_synthetic(sc);
  const ModelGraph g = build_mini_mobilenet(0.25, 1, {3, 16, 16}, 12);
  TrainConfig cfg;
  cfg.lr = 0.0;
  cfg.patience = 3;
  cfg.max_epochs = 20;
  const auto folds = kfold_split(ds.size(), 5, 1, ds.labels);
  std::size_t calls = 0;
  const auto r = train(g, ds, folds[0].train, folds[0].val, cfg, [&](const EpochRecord&) { ++calls; });
  // Parameters never move, so every epoch ties on F1; the first one wins.
  EXPECT_EQ(r.best_epoch, 1u);
  EXPECT_EQ(r.history.size(), 4u);
  EXPECT_EQ(calls, 4u);
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    EXPECT_EQ(r.model.layers[i].weight, g.layers[i].weight);
    EXPECT_EQ(r.model.layers[i].bias, g.layers[i].bias);
    EXPECT_EQ(r.model.layers[i].gamma, g.layers[i].gamma);
    EXPECT_EQ(r.model.layers[i].beta, g.layers[i].beta);
  }
}

TEST(Train, ReturnedModelReproducesBestValidation) {
  SynthConfig sc;
  sc.n_samples = 60;
  sc.image_size = 16;
  sc.seed = 8;
  const Dataset ds = gen_synthetic(sc);
  const ModelGraph g = build_mini_mobilenet(0.25, 1, {3, 16, 16}, 13);
  TrainConfig cfg;
  cfg.lr = 3e-3;
  cfg.batch_size = 8;
  cfg.patience = 3;
  cfg.max_epochs = 12;
  const auto folds = kfold_split(ds.size(), 5, 2, ds.labels);
  const auto r = train(g, ds, folds[0].train, folds[0].val, cfg);
  ASSERT_LT(r.best_epoch, r.history.size());  // training continued past the best epoch
  // Running statistics must come from the same epoch as the weights.
  std::vector<int> labels;
  std::vector<double> scores;
  for (std::size_t i : folds[0].val) {
    labels.push_back(ds.labels[i]);
    scores.push_back(forward_fp32(r.model, ds.images[i]));
  }
  const auto m = evaluate_scores(labels, scores);
  EXPECT_EQ(m.f1, r.best_val.f1);
  EXPECT_NEAR(m.loss, r.best_val.loss, 1e-5);
}

TEST(Train, DeterministicHistory) {
  SynthConfig sc;
  sc.n_samples = 40;
  sc.image_size = 16;
  sc.seed = 6;
  const Dataset ds = gen_synthetic(sc);
  const ModelGraph g = build_mini_mobilenet(0.25, 1, {3, 16, 16}, 13);
  TrainConfig cfg;
  cfg.lr = 1e-3;
  cfg.max_epochs = 3;
  cfg.patience = 3;
  const auto folds = kfold_split(ds.size(), 5, 1, ds.labels);
  const auto a = train(g, ds, folds[0].train, folds[0].val, cfg);
  const auto b = train(g, ds, folds[0].train, folds[0].val, cfg);
  EXPECT_EQ(a.model, b.model);
  ASSERT_EQ(a.history.size(), b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    EXPECT_EQ(a.history[i].train.loss, b.history[i].train.loss);
    EXPECT_EQ(a.history[i].val.f1, b.history[i].val.f1);
  }
  EXPECT_THROW(train(g, ds, {}, folds[0].val, cfg), UsageError);
}

TEST(Synthetic, DeterministicAndBalanced) {
  SynthConfig sc;
  sc.n_samples = 10;
  sc.seed = 3;
  EXPECT_EQ(gen_synthetic(sc), gen_synthetic(sc));
  sc.n_samples = 710;
  sc.image_size = 8;
  EXPECT_EQ(gen_synthetic(sc).positives(), 426u);
  sc.class_balance = 1.0;
  EXPECT_THROW(gen_synthetic(sc), UsageError);
}

TEST(Synthetic, ClassesSeparateOnCentralRed) {
  SynthConfig sc;
  sc.n_samples = 200;
  sc.image_size = 32;
  sc.seed = 9;
  const Dataset ds = gen_synthetic(sc);
  double sum[2] = {0, 0};
  std::size_t cnt[2] = {0, 0};
  for (std::size_t i = 0; i < ds.size(); ++i) {
    // 6x6 window at the centre lies inside every ellipse the generator draws.
    double m = 0;
    for (std::size_t y = 13; y < 19; ++y)
      for (std::size_t x = 13; x < 19; ++x) m += ds.images[i][y * 32 + x];
    sum[ds.labels[i]] += m / 36;
    cnt[ds.labels[i]]++;
  }
  const double gap = sum[0] / double(cnt[0]) - sum[1] / double(cnt[1]);
  EXPECT_GE(gap, 3 * sc.noise_sigma);
}

TEST(Synthetic, ResizeConstantStaysConstant) {
  const Tensor c = Tensor::filled({3, 10, 14}, 0.3f);
  const Tensor r = resize_bilinear(c, 7, 23);
  for (float v : r.data()) EXPECT_FLOAT_EQ(v, 0.3f);
  EXPECT_EQ(resize_bilinear(c, 10, 14), c);
}

TEST(Augment, IdentityAndFlipInvolution) {
  Rng rng(1);
  const Tensor img = oracle::random_tensor(rng, {3, 9, 12}, 0, 1);
  EXPECT_EQ(augment(img, AugmentParams{}), img);
  AugmentParams flip;
  flip.flip = true;
  const Tensor once = augment(img, flip);
  EXPECT_NE(once, img);
  EXPECT_EQ(augment(once, flip), img);
}

TEST(Augment, StaysInUnitRange) {
  Rng rng(2);
  const Tensor img = oracle::random_tensor(rng, {3, 16, 16}, 0, 1);
  for (int i = 0; i < 1000; ++i) {
    const Tensor a = augment(img, rng);
    for (float v : a.data()) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
  }
}

TEST(KFold, PartitionProperties) {
  const auto folds = kfold_split(10, 5, 1);
  std::multiset<std::size_t> seen;
  for (const auto& f : folds) {
    EXPECT_EQ(f.val.size(), 2u);
    EXPECT_EQ(f.train.size(), 8u);
    for (auto i : f.val) seen.insert(i);
    for (auto i : f.val) EXPECT_EQ(std::count(f.train.begin(), f.train.end(), i), 0);
  }
  EXPECT_EQ(seen.size(), 10u);
  EXPECT_EQ(std::set<std::size_t>(seen.begin(), seen.end()).size(), 10u);
  EXPECT_THROW(kfold_split(3, 5, 1), UsageError);
  EXPECT_EQ(kfold_split(10, 5, 1)[2].val, folds[2].val);
}

TEST(KFold, StratifiedKeepsClassFraction) {
  Rng rng(3);
  std::vector<int> labels(103);
  for (auto& l : labels) l = rng.bernoulli(0.6);
  std::size_t pos = 0;
  for (int l : labels) pos += l;
  const auto folds = kfold_split(labels.size(), 5, 7, labels);
  for (const auto& f : folds) {
    std::size_t p = 0;
    for (auto i : f.val) p += labels[i];
    const double expected = double(pos) * double(f.val.size()) / double(labels.size());
    EXPECT_LE(std::fabs(double(p) - expected), 1.0 + 1e-9);
  }
}
