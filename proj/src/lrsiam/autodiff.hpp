#pragma once

// Reverse-mode differentiation over TensorT. Every op is a free function
// taking and returning Var; when gradient recording is enabled and any input
// requires a gradient, the result carries a backward closure and references to
// its parents. Var::backward() walks the graph once in reverse topological
// order. No op broadcasts implicitly: shapes must agree exactly.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "lrsiam/tensor.hpp"

namespace lrsiam {

template <typename T>
struct Node {
  TensorT<T> value;
  TensorT<T> grad;  // allocated on first accumulation
  bool has_grad = false;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  /// Returns the gradient buffer, zero-initialising it on first use.
  TensorT<T>& grad_buffer() {
    if (!has_grad) {
      grad = TensorT<T>(value.shape(), T(0));
      has_grad = true;
    }
    return grad;
  }
  bool is_leaf() const { return !backward_fn; }
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(TensorT<T> value, bool requires_grad = false);

  const TensorT<T>& value() const { return node_->value; }
  TensorT<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }
  bool defined() const { return static_cast<bool>(node_); }

  /// Gradient accumulated by backward(); zeros if nothing was accumulated yet.
  const TensorT<T>& grad() const { return node_->grad_buffer(); }
  TensorT<T>& grad_mut() { return node_->grad_buffer(); }
  bool has_grad() const { return node_->has_grad; }
  void zero_grad();

  /// Seeds d(this)/d(this) = 1 and propagates. Requires a one-element value.
  /// Intermediate gradients and closures are released as the walk proceeds.
  void backward() const;

  const std::shared_ptr<Node<T>>& node() const { return node_; }
  static Var from_node(std::shared_ptr<Node<T>> n) {
    Var v;
    v.node_ = std::move(n);
    return v;
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Gradient recording switch (thread-local). Forward passes run under
/// NoGradGuard build no graph.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Elementwise and reductions.
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T s);
template <typename T> Var<T> add_scalar(const Var<T>& a, T s);
template <typename T> Var<T> relu(const Var<T>& a);
/// sqrt with a zero subgradient at 0.
template <typename T> Var<T> sqrt(const Var<T>& a);
template <typename T> Var<T> sum(const Var<T>& a);
template <typename T> Var<T> sum_squares(const Var<T>& a);
/// Sum of a list of one-element values, accumulated in list order.
template <typename T> Var<T> add_n(std::span<const Var<T>> terms);

// Shape ops.
template <typename T> Var<T> reshape(const Var<T>& a, Shape shape);
/// Rows [begin, end) along axis 0.
template <typename T> Var<T> slice(const Var<T>& a, std::size_t begin, std::size_t end);
/// Concatenation along `axis`; every other dimension must match.
template <typename T> Var<T> concat(std::span<const Var<T>> parts, std::size_t axis);

// Max reductions. Ties resolve to the first occurrence in scan order; the
// backward pass routes the whole incoming gradient to that element.
template <typename T> Var<T> temporal_max(std::span<const Var<T>> inputs);
/// temporal_max over rows [begin, end) of axis 0; result drops axis 0.
template <typename T> Var<T> interval_max(const Var<T>& a, std::size_t begin, std::size_t end);
/// input HxWxC or NxHxWxC; square window.
template <typename T> Var<T> max_pool2d(const Var<T>& input, std::size_t window, std::size_t stride);

// Layers.
/// input HxWxCin or NxHxWxCin, kernel kHxkWxCinxCout, bias Cout.
template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& kernel, const Var<T>& bias, std::size_t stride,
              std::size_t padding);
/// input d_in or Nxd_in, weights d_in x d_out, bias d_out.
template <typename T>
Var<T> fully_connected(const Var<T>& input, const Var<T>& weights, const Var<T>& bias);
/// logits C with one label, or NxC with N labels (summed). Uses max-subtraction.
template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, std::span<const std::size_t> labels);
template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, std::size_t label);

/// Row-wise softmax of a C or NxC tensor (no graph).
template <typename T> TensorT<T> softmax(const TensorT<T>& logits);

}  // namespace lrsiam
