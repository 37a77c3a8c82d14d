#pragma once

#include <functional>
#include <string>
#include <vector>

#include "lrsiam/params.hpp"

namespace lrsiam {

/// SGD with heavy-ball momentum: v = mu v + g; w -= lr v.
/// Velocity buffers follow the parameter set's order and are allocated lazily.
template <typename T>
class SgdMomentum {
 public:
  SgdMomentum(double lr, double momentum) : lr_(lr), momentum_(momentum) {}

  /// Updates every trainable parameter that has a gradient and passes `only`.
  void step(ParamSet<T>& params, const std::function<bool(const std::string&)>& only = {}) {
    auto& items = params.items();
    if (velocity_.size() != items.size()) velocity_.assign(items.size(), {});
    const T lr = static_cast<T>(lr_);
    const T mu = static_cast<T>(momentum_);
    for (std::size_t i = 0; i < items.size(); ++i) {
      auto& p = items[i];
      if (!p.trainable || !p.var.has_grad()) continue;
      if (only && !only(p.name)) continue;
      auto& v = velocity_[i];
      T* w = p.var.mutable_value().ptr();
      const T* g = p.var.grad().ptr();
      const std::size_t n = p.var.value().size();
      if (v.size() != n) v.assign(n, T(0));
      T* vp = v.data();
      for (std::size_t j = 0; j < n; ++j) {
        vp[j] = mu * vp[j] + g[j];
        w[j] -= lr * vp[j];
      }
    }
  }

  void reset() { velocity_.clear(); }
  double learning_rate() const { return lr_; }

 private:
  double lr_;
  double momentum_;
  std::vector<std::vector<T>> velocity_;
};

}  // namespace lrsiam
