#pragma once

#include <span>

#include "lrsiam/autodiff.hpp"

namespace lrsiam {

/// 1 when both embeddings come from the same source video, 0 otherwise.
enum class PairLabel { negative = 0, positive = 1 };

struct LossWeights {
  double lambda1 = 1.0;  // contrastive term
  double lambda2 = 1.0;  // classification term
  double margin = 1.0;

  void validate() const;
};

/// ||a - b||^2 for two equally shaped values.
template <typename T>
Var<T> squared_distance(const Var<T>& a, const Var<T>& b);

/// y * d^2 + (1 - y) * max(0, m - d)^2 with d = ||a - b||.
template <typename T>
Var<T> contrastive_pair(const Var<T>& a, const Var<T>& b, PairLabel y, double margin);

/// b1 and b2 are [n, d]: n embeddings of one source video and n embeddings of
/// other sources. Returns
///   sum_{k<l} ||b1_k - b1_l||^2 + max(0, n^2 m^2 - sum_k sum_j ||b1_k - b2_j||^2).
template <typename T>
Var<T> multi_siamese_loss(const Var<T>& b1, const Var<T>& b2, double margin);

/// lambda1 * contrastive + lambda2 * sum(classification), summed in order.
template <typename T>
Var<T> combined_loss(const Var<T>& contrastive, std::span<const Var<T>> classification,
                     const LossWeights& w);

}  // namespace lrsiam
