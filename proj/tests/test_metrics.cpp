#include <gtest/gtest.h>

#include <cmath>

#include <boost/multiprecision/cpp_bin_float.hpp>

#include "oracles.hpp"
#include "qbench/metrics.hpp"

using namespace qbench;

namespace {

struct Sample {
  std::vector<int> labels;
  std::vector<double> scores;
};

// Scores on a coarse grid so that ties occur.
Sample random_sample(Rng& rng, std::size_t n, bool coarse) {
  Sample s;
  for (std::size_t i = 0; i < n; ++i) {
    s.labels.push_back(rng.bernoulli(0.5) ? 1 : 0);
    const double u = rng.uniform();
    s.scores.push_back(coarse ? std::floor(u * 10.0) / 10.0 : u);
  }
  s.labels[0] = 1;
  s.labels[1] = 0;
  return s;
}

}  // namespace

TEST(Confusion, Examples) {
  const auto c = confusion(std::vector<int>{1, 0}, std::vector<double>{0.9, 0.1});
  EXPECT_EQ(c.tp, 1u);
  EXPECT_EQ(c.tn, 1u);
  EXPECT_EQ(confusion(std::vector<int>{1}, std::vector<double>{0.5}).tp, 1u);
  EXPECT_THROW(confusion(std::vector<int>{1}, std::vector<double>{}), UsageError);
}

TEST(Confusion, MatchesRecount) {
  Rng rng(1);
  for (int t = 0; t < 20; ++t) {
    const auto s = random_sample(rng, 1000, t % 2 == 0);
    const auto c = confusion(s.labels, s.scores);
    const auto r = oracle::recount(s.labels, s.scores, 0.5);
    EXPECT_EQ(c.tp, r.tp);
    EXPECT_EQ(c.tn, r.tn);
    EXPECT_EQ(c.fp, r.fp);
    EXPECT_EQ(c.fn, r.fn);
    EXPECT_EQ(c.total(), 1000u);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < 1000; ++i) correct += (s.scores[i] >= 0.5) == (s.labels[i] == 1);
    EXPECT_EQ(classification_metrics(c).accuracy, double(correct) / 1000.0);
  }
}

TEST(ClassificationMetrics, Perfect) {
  const auto m = classification_metrics({50, 50, 0, 0});
  EXPECT_EQ(m.accuracy, 1.0);
  EXPECT_EQ(m.precision, 1.0);
  EXPECT_EQ(m.recall, 1.0);
  EXPECT_EQ(m.f1, 1.0);
}

TEST(ClassificationMetrics, DegenerateIsFlagged) {
  const auto m = classification_metrics({0, 10, 0, 10});
  EXPECT_EQ(m.precision, 0.0);
  EXPECT_TRUE(m.precision_undefined);
  EXPECT_EQ(m.recall, 0.0);
  EXPECT_FALSE(m.recall_undefined);
  EXPECT_EQ(m.f1, 0.0);
  EXPECT_EQ(m.accuracy, 0.5);
  EXPECT_THROW(classification_metrics({}), UsageError);
}

TEST(ClassificationMetrics, UsesStandardPrecision) {
  // tp/(tp+fp), not the tp/(tp+tp) misprint that would always give 0.5.
  const auto m = classification_metrics({3, 0, 1, 0});
  EXPECT_DOUBLE_EQ(m.precision, 0.75);
}

TEST(ClassificationMetrics, PublishedF1) {
  const double p = 0.9374, r = 0.9500;
  const double f1 = 2 * p * r / (p + r);
  EXPECT_NEAR(f1, 0.9428, 1e-3);
}

TEST(ClassificationMetrics, F1IsBetweenPrecisionAndRecall) {
  Rng rng(2);
  for (int t = 0; t < 1000; ++t) {
    const ConfusionCounts c{1 + rng.below(100), rng.below(100), rng.below(100), rng.below(100)};
    const auto m = classification_metrics(c);
    EXPECT_LE(std::min(m.precision, m.recall), m.f1 + 1e-15);
    EXPECT_GE(std::max(m.precision, m.recall), m.f1 - 1e-15);
  }
}

TEST(Auc, Examples) {
  EXPECT_EQ(auc(std::vector<int>{1, 1, 0, 0}, std::vector<double>{0.9, 0.8, 0.2, 0.1}), 1.0);
  EXPECT_EQ(auc(std::vector<int>{1, 0}, std::vector<double>{0.4, 0.4}), 0.5);
  EXPECT_THROW(auc(std::vector<int>{1, 1}, std::vector<double>{0.4, 0.3}), UsageError);
}

TEST(Auc, MatchesPairwiseOracle) {
  Rng rng(3);
  for (int t = 0; t < 100; ++t) {
    const auto s = random_sample(rng, 200, t % 2 == 0);
    EXPECT_NEAR(auc(s.labels, s.scores), oracle::auc_pairwise(s.labels, s.scores), 1e-9);
  }
}

TEST(Auc, InvariantUnderMonotoneTransform) {
  Rng rng(4);
  for (int t = 0; t < 20; ++t) {
    const auto s = random_sample(rng, 150, t % 2 == 0);
    std::vector<double> tr;
    for (double v : s.scores) tr.push_back(std::exp(3.0 * v) - 7.0);
    EXPECT_EQ(auc(s.labels, s.scores), auc(s.labels, tr));
  }
}

TEST(Bce, Examples) {
  EXPECT_NEAR(bce_loss(std::vector<int>{1}, std::vector<double>{0.5}), std::log(2.0), 1e-15);
  EXPECT_LT(bce_loss(std::vector<int>{1}, std::vector<double>{1.0}), 1e-6);
  EXPECT_TRUE(std::isfinite(bce_loss(std::vector<int>{1}, std::vector<double>{0.0})));
  EXPECT_THROW(bce_loss(std::vector<int>{1}, std::vector<double>{0.5, 0.5}), UsageError);
}

TEST(Bce, MatchesHighPrecisionSum) {
  using Big = boost::multiprecision::cpp_bin_float_50;
  Rng rng(5);
  for (int t = 0; t < 10; ++t) {
    const auto s = random_sample(rng, 500, false);
    Big sum = 0;
    for (std::size_t i = 0; i < s.labels.size(); ++i) {
      const Big p = std::clamp(s.scores[i], 1e-7, 1 - 1e-7);
      sum += s.labels[i] ? boost::multiprecision::log(p) : boost::multiprecision::log(Big(1) - p);
    }
    const double ref = static_cast<double>(-sum / Big(s.labels.size()));
    EXPECT_NEAR(bce_loss(s.labels, s.scores), ref, 1e-9 * ref);
  }
}

TEST(EvaluateScores, SingleClassFlagsAuc) {
  const auto r = evaluate_scores(std::vector<int>{1, 1}, std::vector<double>{0.7, 0.2});
  EXPECT_TRUE(r.auc_undefined);
  EXPECT_EQ(r.accuracy, 0.5);
}
