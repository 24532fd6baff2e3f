#pragma once

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "qbench/errors.hpp"
#include "qbench/rng.hpp"

namespace qbench {

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

// Shuffled k-fold partition. With labels, each class is shuffled on its own
// and dealt round-robin so per-fold class counts stay within one of each other.
inline std::vector<Fold> kfold_split(std::size_t n, std::size_t k, std::uint64_t seed,
                                     std::span<const int> stratify_labels = {}) {
  if (k < 2) throw UsageError("k-fold needs k >= 2");
  if (n < k) throw UsageError("cannot split " + std::to_string(n) + " samples into " + std::to_string(k) + " folds");
  if (!stratify_labels.empty() && stratify_labels.size() != n) throw UsageError("stratify labels length mismatch");

  Rng rng(derive_seed(seed, 0xF01D));
  std::vector<std::size_t> order;
  if (stratify_labels.empty()) {
    order.resize(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
  } else {
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < n; ++i) (stratify_labels[i] ? pos : neg).push_back(i);
    rng.shuffle(pos);
    rng.shuffle(neg);
    order = pos;
    order.insert(order.end(), neg.begin(), neg.end());
  }

  std::vector<Fold> folds(k);
  for (std::size_t i = 0; i < n; ++i) folds[i % k].val.push_back(order[i]);
  for (std::size_t f = 0; f < k; ++f) {
    std::vector<bool> in_val(n, false);
    for (std::size_t i : folds[f].val) in_val[i] = true;
    for (std::size_t i = 0; i < n; ++i)
      if (!in_val[i]) folds[f].train.push_back(i);
  }
  return folds;
}

}  // namespace qbench
