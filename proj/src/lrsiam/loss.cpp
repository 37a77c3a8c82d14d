#include "lrsiam/loss.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace lrsiam {

void LossWeights::validate() const {
  if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) {
    throw std::invalid_argument("loss weights must be non-negative");
  }
  if (!(margin >= 0.0) || !std::isfinite(margin)) {
    throw std::invalid_argument("margin must be a finite non-negative number");
  }
}

template <typename T>
Var<T> squared_distance(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("embedding dimension mismatch: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  return sum_squares(sub(a, b));
}

template <typename T>
Var<T> contrastive_pair(const Var<T>& a, const Var<T>& b, PairLabel y, double margin) {
  Var<T> d2 = squared_distance(a, b);
  if (y == PairLabel::positive) return d2;
  // max(0, m - d) expressed as relu(-(d) + m)
  Var<T> hinge = relu(add_scalar(scale(sqrt(d2), T(-1)), static_cast<T>(margin)));
  return mul(hinge, hinge);
}

template <typename T>
Var<T> multi_siamese_loss(const Var<T>& b1, const Var<T>& b2, double margin) {
  if (b1.shape().size() != 2 || b2.shape() != b1.shape()) {
    throw ShapeError("multi_siamese_loss: b1 " + shape_str(b1.shape()) + " and b2 " +
                     shape_str(b2.shape()) + " must both be [n, d]");
  }
  const std::size_t n = b1.shape()[0];
  if (n == 0) throw ShapeError("multi_siamese_loss: n must be >= 1");

  std::vector<Var<T>> pos_rows;
  std::vector<Var<T>> neg_rows;
  for (std::size_t k = 0; k < n; ++k) {
    pos_rows.push_back(slice(b1, k, k + 1));
    neg_rows.push_back(slice(b2, k, k + 1));
  }

  std::vector<Var<T>> positive;
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t l = k + 1; l < n; ++l) positive.push_back(squared_distance(pos_rows[k], pos_rows[l]));
  }
  std::vector<Var<T>> negative;
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t j = 0; j < n; ++j) negative.push_back(squared_distance(pos_rows[k], neg_rows[j]));
  }

  const T bound = static_cast<T>(double(n) * double(n) * margin * margin);
  Var<T> hinge = relu(add_scalar(scale(add_n<T>(negative), T(-1)), bound));
  if (positive.empty()) return hinge;  // n == 1 has no positive pairs
  const Var<T> terms[] = {add_n<T>(positive), hinge};
  return add_n<T>(terms);
}

template <typename T>
Var<T> combined_loss(const Var<T>& contrastive, std::span<const Var<T>> classification,
                     const LossWeights& w) {
  std::vector<Var<T>> terms;
  terms.push_back(scale(contrastive, static_cast<T>(w.lambda1)));
  if (!classification.empty()) terms.push_back(scale(add_n(classification), static_cast<T>(w.lambda2)));
  return add_n<T>(terms);
}

#define LRSIAM_LOSS_INSTANTIATE(T)                                                              \
  template Var<T> squared_distance(const Var<T>&, const Var<T>&);                               \
  template Var<T> contrastive_pair(const Var<T>&, const Var<T>&, PairLabel, double);            \
  template Var<T> multi_siamese_loss(const Var<T>&, const Var<T>&, double);                     \
  template Var<T> combined_loss(const Var<T>&, std::span<const Var<T>>, const LossWeights&);

LRSIAM_LOSS_INSTANTIATE(float)
LRSIAM_LOSS_INSTANTIATE(double)

}  // namespace lrsiam
