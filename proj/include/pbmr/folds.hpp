#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <unordered_map>
#include <vector>

#include "pbmr/error.hpp"
#include "pbmr/rng.hpp"

namespace pbmr {

/// Assignment of samples to k disjoint, covering folds whose sizes differ
/// by at most one.
struct FoldPlan {
  std::size_t folds = 0;
  std::vector<std::string> sample_ids;
  std::vector<std::size_t> assignment; ///< fold of sample_ids[i]

  std::size_t fold_of(const std::string& id) const {
    for (std::size_t i = 0; i < sample_ids.size(); ++i)
      if (sample_ids[i] == id) return assignment[i];
    throw ValidationError("fold plan: unknown sample '" + id + "'");
  }

  /// Positions (into sample_ids) held out in fold f, ascending.
  std::vector<std::size_t> validation(std::size_t f) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < assignment.size(); ++i)
      if (assignment[i] == f) out.push_back(i);
    return out;
  }

  /// Positions used for training when fold f is held out, ascending.
  std::vector<std::size_t> training(std::size_t f) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < assignment.size(); ++i)
      if (assignment[i] != f) out.push_back(i);
    return out;
  }

  std::vector<std::size_t> sizes() const {
    std::vector<std::size_t> out(folds, 0);
    for (auto a : assignment) ++out[a];
    return out;
  }
};

/// Seeded shuffle, then round-robin assignment.
inline FoldPlan make_folds(const std::vector<std::string>& sample_ids, std::size_t k, std::uint64_t seed) {
  if (k < 2 || k > sample_ids.size()) {
    throw ValidationError("folds: k=" + std::to_string(k) + " must be in [2, " + std::to_string(sample_ids.size()) +
                          "]");
  }
  FoldPlan plan;
  plan.folds = k;
  plan.sample_ids = sample_ids;
  plan.assignment.assign(sample_ids.size(), 0);
  std::vector<std::size_t> order(sample_ids.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, {0x464f4c44})); // "FOLD"
  rng.shuffle(order.begin(), order.end());
  for (std::size_t r = 0; r < order.size(); ++r) plan.assignment[order[r]] = r % k;
  return plan;
}

} // namespace pbmr
