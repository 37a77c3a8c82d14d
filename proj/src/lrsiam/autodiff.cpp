#include "lrsiam/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>
#include <utility>

#include "lrsiam/blas.hpp"

namespace lrsiam {

namespace {

// Max selection that keeps a NaN once seen, so divergence is not masked.
template <typename T>
bool takes_max(T candidate, T best) {
  return candidate > best || (std::isnan(candidate) && !std::isnan(best));
}


thread_local bool g_grad_enabled = true;

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
Var<T> make_op(TensorT<T> value, const char* op, std::vector<NodePtr<T>> parents,
               std::function<void(Node<T>&)> fn) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  bool req = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) req = req || p->requires_grad;
  }
  if (req) {
    n->requires_grad = true;
    n->op = op;
    n->parents = std::move(parents);
    n->backward_fn = std::move(fn);
  }
  return Var<T>::from_node(std::move(n));
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                     shape_str(b));
  }
}

std::size_t inner_size(const Shape& s, std::size_t from) {
  std::size_t n = 1;
  for (std::size_t i = from; i < s.size(); ++i) n *= s[i];
  return n;
}

/// Image geometry for rank-3 (HWC) or rank-4 (NHWC) inputs.
struct ImageDims {
  std::size_t n, h, w, c;
  bool batched;
};

ImageDims image_dims(const Shape& s, const char* op) {
  if (s.size() == 3) return {1, s[0], s[1], s[2], false};
  if (s.size() == 4) return {s[0], s[1], s[2], s[3], true};
  throw ShapeError(std::string(op) + ": expected HxWxC or NxHxWxC input, got " + shape_str(s));
}

Shape image_shape(const ImageDims& d, std::size_t h, std::size_t w, std::size_t c) {
  if (d.batched) return {d.n, h, w, c};
  return {h, w, c};
}

struct ConvGeom {
  ImageDims in;
  std::size_t kh, kw, cout, stride, pad, ho, wo;
  std::size_t patch() const { return kh * kw * in.c; }
  std::size_t pixels() const { return ho * wo; }
};

template <typename T>
void im2col(const T* img, const ConvGeom& g, T* col) {
  const std::size_t cin = g.in.c;
  for (std::size_t oy = 0; oy < g.ho; ++oy) {
    for (std::size_t ox = 0; ox < g.wo; ++ox) {
      T* row = col + (oy * g.wo + ox) * g.patch();
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
          T* dst = row + (ky * g.kw + kx) * cin;
          if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.in.h) ||
              ix >= static_cast<long>(g.in.w)) {
            std::fill(dst, dst + cin, T(0));
          } else {
            const T* src = img + (static_cast<std::size_t>(iy) * g.in.w +
                                  static_cast<std::size_t>(ix)) *
                                     cin;
            std::copy(src, src + cin, dst);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeom& g, T* img) {
  const std::size_t cin = g.in.c;
  for (std::size_t oy = 0; oy < g.ho; ++oy) {
    for (std::size_t ox = 0; ox < g.wo; ++ox) {
      const T* row = col + (oy * g.wo + ox) * g.patch();
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
        if (iy < 0 || iy >= static_cast<long>(g.in.h)) continue;
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
          if (ix < 0 || ix >= static_cast<long>(g.in.w)) continue;
          const T* src = row + (ky * g.kw + kx) * cin;
          T* dst = img + (static_cast<std::size_t>(iy) * g.in.w + static_cast<std::size_t>(ix)) *
                             cin;
          for (std::size_t c = 0; c < cin; ++c) dst[c] += src[c];
        }
      }
    }
  }
}

// Images per im2col chunk: keeps the column buffer around 4M elements.
std::size_t conv_chunk(const ConvGeom& g) {
  const std::size_t per_image = std::max<std::size_t>(1, g.pixels() * g.patch());
  return std::clamp<std::size_t>((std::size_t{1} << 22) / per_image, 1, g.in.n);
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

template <typename T>
Var<T>::Var(TensorT<T> value, bool requires_grad) : node_(std::make_shared<Node<T>>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

template <typename T>
void Var<T>::zero_grad() {
  if (node_->has_grad) node_->grad.fill(T(0));
}

template <typename T>
void Var<T>::backward() const {
  if (node_->value.size() != 1) {
    throw ShapeError("backward() requires a one-element output, got " +
                     shape_str(node_->value.shape()));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<NodePtr<T>> order;
  std::unordered_set<const Node<T>*> visited;
  std::vector<std::pair<NodePtr<T>, std::size_t>> stack;
  stack.emplace_back(node_, 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      NodePtr<T> p = n->parents[next++];
      if (p->requires_grad && visited.insert(p.get()).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>& n = **it;
    if (n.is_leaf()) continue;
    if (n.has_grad) n.backward_fn(n);
    n.backward_fn = nullptr;
    n.parents.clear();
    n.grad = TensorT<T>();
    n.has_grad = false;
  }
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  TensorT<T> out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return make_op<T>(std::move(out), "add", {a.node(), b.node()}, [](Node<T>& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  TensorT<T> out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return make_op<T>(std::move(out), "sub", {a.node(), b.node()}, [](Node<T>& self) {
    if (self.parents[0]->requires_grad) {
      auto& g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (self.parents[1]->requires_grad) {
      auto& g = self.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  TensorT<T> out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return make_op<T>(std::move(out), "mul", {a.node(), b.node()}, [](Node<T>& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (pa->requires_grad) {
      auto& g = pa->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb->value[i];
    }
    if (pb->requires_grad) {
      auto& g = pb->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa->value[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  TensorT<T> out = a.value();
  for (auto& v : out.data()) v *= s;
  return make_op<T>(std::move(out), "scale", {a.node()}, [s](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T s) {
  TensorT<T> out = a.value();
  for (auto& v : out.data()) v += s;
  return make_op<T>(std::move(out), "add_scalar", {a.node()}, [](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  TensorT<T> out = a.value();
  for (auto& v : out.data()) v = v < T(0) ? T(0) : v;  // NaN passes through
  return make_op<T>(std::move(out), "relu", {a.node()}, [](Node<T>& self) {
    auto& p = self.parents[0];
    auto& g = p->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (p->value[i] > T(0)) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> sqrt(const Var<T>& a) {
  TensorT<T> out = a.value();
  for (auto& v : out.data()) {
    if (v < T(0)) throw std::domain_error("sqrt of negative value");
    v = std::sqrt(v);
  }
  return make_op<T>(std::move(out), "sqrt", {a.node()}, [](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (self.value[i] > T(0)) g[i] += self.grad[i] / (T(2) * self.value[i]);
    }
  });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  T s = T(0);
  for (T v : a.value().data()) s += v;
  return make_op<T>(TensorT<T>::scalar(s), "sum", {a.node()}, [](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    const T up = self.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += up;
  });
}

template <typename T>
Var<T> sum_squares(const Var<T>& a) {
  T s = T(0);
  for (T v : a.value().data()) s += v * v;
  return make_op<T>(TensorT<T>::scalar(s), "sum_squares", {a.node()}, [](Node<T>& self) {
    auto& p = self.parents[0];
    auto& g = p->grad_buffer();
    const T up = T(2) * self.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += up * p->value[i];
  });
}

template <typename T>
Var<T> add_n(std::span<const Var<T>> terms) {
  if (terms.empty()) throw std::invalid_argument("add_n: empty term list");
  std::vector<NodePtr<T>> parents;
  T s = T(0);
  for (const auto& t : terms) {
    if (t.value().size() != 1) {
      throw ShapeError("add_n: terms must be one-element, got " + shape_str(t.shape()));
    }
    s += t.value()[0];
    parents.push_back(t.node());
  }
  return make_op<T>(TensorT<T>::scalar(s), "add_n", std::move(parents), [](Node<T>& self) {
    for (auto& p : self.parents) {
      if (p->requires_grad) p->grad_buffer()[0] += self.grad[0];
    }
  });
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  if (shape_numel(shape) != a.value().size()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  return make_op<T>(a.value().reshaped(std::move(shape)), "reshape", {a.node()},
                    [](Node<T>& self) {
                      auto& g = self.parents[0]->grad_buffer();
                      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                    });
}

template <typename T>
Var<T> slice(const Var<T>& a, std::size_t begin, std::size_t end) {
  const Shape& s = a.shape();
  if (begin >= end || end > s[0]) {
    throw ShapeError("slice: rows [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of range for " + shape_str(s));
  }
  const std::size_t inner = inner_size(s, 1);
  Shape os = s;
  os[0] = end - begin;
  const auto src = a.value().data();
  std::vector<T> out(src.begin() + begin * inner, src.begin() + end * inner);
  return make_op<T>(TensorT<T>(std::move(os), std::move(out)), "slice", {a.node()},
                    [begin, inner](Node<T>& self) {
                      auto& g = self.parents[0]->grad_buffer();
                      T* dst = g.ptr() + begin * inner;
                      for (std::size_t i = 0; i < self.grad.size(); ++i) dst[i] += self.grad[i];
                    });
}

template <typename T>
Var<T> concat(std::span<const Var<T>> parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: empty input list");
  const Shape& ref = parts[0].shape();
  if (axis >= ref.size()) {
    throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for " +
                     shape_str(ref));
  }
  Shape os = ref;
  os[axis] = 0;
  std::vector<NodePtr<T>> parents;
  std::vector<std::size_t> blocks;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == ref.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) {
      if (i != axis && s[i] != ref[i]) ok = false;
    }
    if (!ok) {
      throw ShapeError("concat: non-concat dims differ: " + shape_str(ref) + " vs " +
                       shape_str(s));
    }
    os[axis] += s[axis];
    blocks.push_back(s[axis] * inner_size(s, axis + 1));
    parents.push_back(p.node());
  }
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= ref[i];
  std::size_t row = 0;
  for (std::size_t b : blocks) row += b;

  TensorT<T> out(os);
  std::size_t off = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const T* src = parts[p].value().ptr();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy(src + o * blocks[p], src + (o + 1) * blocks[p], out.ptr() + o * row + off);
    }
    off += blocks[p];
  }
  return make_op<T>(std::move(out), "concat", std::move(parents),
                    [blocks, outer, row](Node<T>& self) {
                      std::size_t off = 0;
                      for (std::size_t p = 0; p < self.parents.size(); ++p) {
                        if (self.parents[p]->requires_grad) {
                          T* g = self.parents[p]->grad_buffer().ptr();
                          for (std::size_t o = 0; o < outer; ++o) {
                            const T* src = self.grad.ptr() + o * row + off;
                            for (std::size_t i = 0; i < blocks[p]; ++i) g[o * blocks[p] + i] += src[i];
                          }
                        }
                        off += blocks[p];
                      }
                    });
}

template <typename T>
Var<T> temporal_max(std::span<const Var<T>> inputs) {
  if (inputs.empty()) throw std::invalid_argument("temporal_max: empty input list");
  const Shape& ref = inputs[0].shape();
  std::vector<NodePtr<T>> parents;
  for (const auto& in : inputs) {
    require_same_shape(ref, in.shape(), "temporal_max");
    parents.push_back(in.node());
  }
  TensorT<T> out = inputs[0].value();
  std::vector<std::uint32_t> arg(out.size(), 0);
  for (std::size_t k = 1; k < inputs.size(); ++k) {
    const auto v = inputs[k].value().data();
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (takes_max(v[i], out[i])) {
        out[i] = v[i];
        arg[i] = static_cast<std::uint32_t>(k);
      }
    }
  }
  return make_op<T>(std::move(out), "temporal_max", std::move(parents),
                    [arg = std::move(arg)](Node<T>& self) {
                      for (std::size_t i = 0; i < arg.size(); ++i) {
                        auto& p = self.parents[arg[i]];
                        if (p->requires_grad) p->grad_buffer()[i] += self.grad[i];
                      }
                    });
}

template <typename T>
Var<T> interval_max(const Var<T>& a, std::size_t begin, std::size_t end) {
  const Shape& s = a.shape();
  if (begin >= end || end > s[0]) {
    throw ShapeError("interval_max: empty or out-of-range interval [" + std::to_string(begin) +
                     ", " + std::to_string(end) + ") for " + shape_str(s));
  }
  const std::size_t inner = inner_size(s, 1);
  Shape os = s.size() > 1 ? Shape(s.begin() + 1, s.end()) : Shape{1};
  TensorT<T> out(os);
  std::vector<std::uint32_t> arg(inner, static_cast<std::uint32_t>(begin));
  const T* src = a.value().ptr();
  std::copy(src + begin * inner, src + (begin + 1) * inner, out.ptr());
  for (std::size_t r = begin + 1; r < end; ++r) {
    const T* row = src + r * inner;
    for (std::size_t i = 0; i < inner; ++i) {
      if (takes_max(row[i], out[i])) {
        out[i] = row[i];
        arg[i] = static_cast<std::uint32_t>(r);
      }
    }
  }
  return make_op<T>(std::move(out), "interval_max", {a.node()},
                    [arg = std::move(arg), inner](Node<T>& self) {
                      T* g = self.parents[0]->grad_buffer().ptr();
                      for (std::size_t i = 0; i < inner; ++i) g[arg[i] * inner + i] += self.grad[i];
                    });
}

template <typename T>
Var<T> max_pool2d(const Var<T>& input, std::size_t window, std::size_t stride) {
  const ImageDims d = image_dims(input.shape(), "max_pool2d");
  if (window == 0 || stride == 0) throw std::invalid_argument("max_pool2d: window and stride must be >= 1");
  if (window > d.h || window > d.w) {
    throw ShapeError("max_pool2d: window " + std::to_string(window) + " larger than input " +
                     shape_str(input.shape()));
  }
  const std::size_t ho = (d.h - window) / stride + 1;
  const std::size_t wo = (d.w - window) / stride + 1;
  TensorT<T> out(image_shape(d, ho, wo, d.c));
  std::vector<std::uint32_t> arg(out.size());
  const T* src = input.value().ptr();
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        for (std::size_t c = 0; c < d.c; ++c) {
          const std::size_t o = ((n * ho + oy) * wo + ox) * d.c + c;
          T best = -std::numeric_limits<T>::infinity();
          std::size_t best_i = 0;
          for (std::size_t ky = 0; ky < window; ++ky) {
            for (std::size_t kx = 0; kx < window; ++kx) {
              const std::size_t i =
                  ((n * d.h + oy * stride + ky) * d.w + ox * stride + kx) * d.c + c;
              if (takes_max(src[i], best) || (ky == 0 && kx == 0)) {
                best = src[i];
                best_i = i;
              }
            }
          }
          out[o] = best;
          arg[o] = static_cast<std::uint32_t>(best_i);
        }
      }
    }
  }
  return make_op<T>(std::move(out), "max_pool2d", {input.node()},
                    [arg = std::move(arg)](Node<T>& self) {
                      T* g = self.parents[0]->grad_buffer().ptr();
                      for (std::size_t o = 0; o < arg.size(); ++o) g[arg[o]] += self.grad[o];
                    });
}

template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& kernel, const Var<T>& bias, std::size_t stride,
              std::size_t padding) {
  const ImageDims d = image_dims(input.shape(), "conv2d");
  const Shape& ks = kernel.shape();
  if (ks.size() != 4) throw ShapeError("conv2d: kernel must be kHxkWxCinxCout, got " + shape_str(ks));
  if (stride == 0) throw std::invalid_argument("conv2d: stride must be >= 1");
  if (ks[2] != d.c) {
    throw ShapeError("conv2d: kernel Cin " + std::to_string(ks[2]) + " vs input " +
                     shape_str(input.shape()));
  }
  if (ks[0] > d.h + 2 * padding || ks[1] > d.w + 2 * padding) {
    throw ShapeError("conv2d: kernel " + shape_str(ks) + " exceeds padded input " +
                     shape_str(input.shape()) + " (pad " + std::to_string(padding) + ")");
  }
  if (bias.shape() != Shape{ks[3]}) {
    throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " vs Cout " + std::to_string(ks[3]));
  }
  ConvGeom g{d, ks[0], ks[1], ks[3], stride, padding, 0, 0};
  g.ho = (d.h + 2 * padding - g.kh) / stride + 1;
  g.wo = (d.w + 2 * padding - g.kw) / stride + 1;

  TensorT<T> out(image_shape(d, g.ho, g.wo, g.cout));
  const std::size_t chunk = conv_chunk(g);
  const std::size_t in_img = d.h * d.w * d.c;
  const std::size_t out_img = g.pixels() * g.cout;
  std::vector<T> col(chunk * g.pixels() * g.patch());
  const T* b = bias.value().ptr();
  for (std::size_t n0 = 0; n0 < d.n; n0 += chunk) {
    const std::size_t cn = std::min(chunk, d.n - n0);
    for (std::size_t i = 0; i < cn; ++i) {
      im2col(input.value().ptr() + (n0 + i) * in_img, g, col.data() + i * g.pixels() * g.patch());
    }
    T* o = out.ptr() + n0 * out_img;
    const std::size_t rows = cn * g.pixels();
    for (std::size_t r = 0; r < rows; ++r) std::copy(b, b + g.cout, o + r * g.cout);
    blas::gemm<T>(false, false, rows, g.cout, g.patch(), T(1), col.data(), g.patch(),
                  kernel.value().ptr(), g.cout, T(1), o, g.cout);
  }

  return make_op<T>(std::move(out), "conv2d", {input.node(), kernel.node(), bias.node()},
                    [g, chunk, in_img, out_img](Node<T>& self) {
                      auto& px = self.parents[0];
                      auto& pk = self.parents[1];
                      auto& pb = self.parents[2];
                      const T* gy = self.grad.ptr();
                      const std::size_t total_rows = g.in.n * g.pixels();
                      if (pb->requires_grad) {
                        T* gb = pb->grad_buffer().ptr();
                        for (std::size_t r = 0; r < total_rows; ++r) {
                          for (std::size_t c = 0; c < g.cout; ++c) gb[c] += gy[r * g.cout + c];
                        }
                      }
                      if (!px->requires_grad && !pk->requires_grad) return;
                      std::vector<T> col(chunk * g.pixels() * g.patch());
                      for (std::size_t n0 = 0; n0 < g.in.n; n0 += chunk) {
                        const std::size_t cn = std::min(chunk, g.in.n - n0);
                        const std::size_t rows = cn * g.pixels();
                        const T* gyc = gy + n0 * out_img;
                        if (pk->requires_grad) {
                          for (std::size_t i = 0; i < cn; ++i) {
                            im2col(px->value.ptr() + (n0 + i) * in_img, g,
                                   col.data() + i * g.pixels() * g.patch());
                          }
                          blas::gemm<T>(true, false, g.patch(), g.cout, rows, T(1), col.data(),
                                        g.patch(), gyc, g.cout, T(1), pk->grad_buffer().ptr(),
                                        g.cout);
                        }
                        if (px->requires_grad) {
                          blas::gemm<T>(false, true, rows, g.patch(), g.cout, T(1), gyc, g.cout,
                                        pk->value.ptr(), g.cout, T(0), col.data(), g.patch());
                          T* gx = px->grad_buffer().ptr();
                          for (std::size_t i = 0; i < cn; ++i) {
                            col2im_add(col.data() + i * g.pixels() * g.patch(), g,
                                       gx + (n0 + i) * in_img);
                          }
                        }
                      }
                    });
}

template <typename T>
Var<T> fully_connected(const Var<T>& input, const Var<T>& weights, const Var<T>& bias) {
  const Shape& xs = input.shape();
  const Shape& ws = weights.shape();
  if (ws.size() != 2) throw ShapeError("fully_connected: weights must be d_in x d_out, got " + shape_str(ws));
  if (xs.size() != 1 && xs.size() != 2) {
    throw ShapeError("fully_connected: input must be d_in or N x d_in, got " + shape_str(xs));
  }
  const std::size_t din = xs.back();
  const std::size_t n = xs.size() == 2 ? xs[0] : 1;
  if (din != ws[0]) {
    throw ShapeError("fully_connected: input " + shape_str(xs) + " vs weights " + shape_str(ws));
  }
  const std::size_t dout = ws[1];
  if (bias.shape() != Shape{dout}) {
    throw ShapeError("fully_connected: bias " + shape_str(bias.shape()) + " vs d_out " +
                     std::to_string(dout));
  }
  TensorT<T> out(xs.size() == 2 ? Shape{n, dout} : Shape{dout});
  for (std::size_t r = 0; r < n; ++r) {
    std::copy(bias.value().ptr(), bias.value().ptr() + dout, out.ptr() + r * dout);
  }
  blas::gemm<T>(false, false, n, dout, din, T(1), input.value().ptr(), din, weights.value().ptr(),
                dout, T(1), out.ptr(), dout);
  return make_op<T>(std::move(out), "fully_connected", {input.node(), weights.node(), bias.node()},
                    [n, din, dout](Node<T>& self) {
                      auto& px = self.parents[0];
                      auto& pw = self.parents[1];
                      auto& pb = self.parents[2];
                      const T* gy = self.grad.ptr();
                      if (pb->requires_grad) {
                        T* gb = pb->grad_buffer().ptr();
                        for (std::size_t r = 0; r < n; ++r) {
                          for (std::size_t c = 0; c < dout; ++c) gb[c] += gy[r * dout + c];
                        }
                      }
                      if (pw->requires_grad) {
                        blas::gemm<T>(true, false, din, dout, n, T(1), px->value.ptr(), din, gy,
                                      dout, T(1), pw->grad_buffer().ptr(), dout);
                      }
                      if (px->requires_grad) {
                        blas::gemm<T>(false, true, n, din, dout, T(1), gy, dout, pw->value.ptr(),
                                      dout, T(1), px->grad_buffer().ptr(), din);
                      }
                    });
}

template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, std::span<const std::size_t> labels) {
  const Shape& s = logits.shape();
  std::size_t n = 0;
  std::size_t c = 0;
  if (s.size() == 1) {
    n = 1;
    c = s[0];
  } else if (s.size() == 2) {
    n = s[0];
    c = s[1];
  } else {
    throw ShapeError("softmax_cross_entropy: logits must be C or NxC, got " + shape_str(s));
  }
  if (labels.size() != n) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for logits " + shape_str(s));
  }
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  for (std::size_t l : lab) {
    if (l >= c) {
      throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(l) +
                              " out of range for " + std::to_string(c) + " classes");
    }
  }
  TensorT<T> probs = softmax(logits.value());
  double total = 0.0;
  const T* z = logits.value().ptr();
  for (std::size_t r = 0; r < n; ++r) {
    const T* row = z + r * c;
    const double mx = static_cast<double>(*std::max_element(row, row + c));
    double se = 0.0;
    for (std::size_t j = 0; j < c; ++j) se += std::exp(static_cast<double>(row[j]) - mx);
    total += mx + std::log(se) - static_cast<double>(row[lab[r]]);
  }
  return make_op<T>(TensorT<T>::scalar(static_cast<T>(total)), "softmax_cross_entropy",
                    {logits.node()},
                    [probs = std::move(probs), lab = std::move(lab), c](Node<T>& self) {
                      T* g = self.parents[0]->grad_buffer().ptr();
                      const T up = self.grad[0];
                      for (std::size_t r = 0; r < lab.size(); ++r) {
                        for (std::size_t j = 0; j < c; ++j) {
                          const T onehot = j == lab[r] ? T(1) : T(0);
                          g[r * c + j] += up * (probs[r * c + j] - onehot);
                        }
                      }
                    });
}

template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, std::size_t label) {
  const std::size_t one[1] = {label};
  return softmax_cross_entropy(logits, std::span<const std::size_t>(one));
}

template <typename T>
TensorT<T> softmax(const TensorT<T>& logits) {
  const std::size_t c = logits.shape().back();
  const std::size_t n = logits.size() / c;
  TensorT<T> out(logits.shape());
  for (std::size_t r = 0; r < n; ++r) {
    const T* row = logits.ptr() + r * c;
    const double mx = static_cast<double>(*std::max_element(row, row + c));
    double se = 0.0;
    for (std::size_t j = 0; j < c; ++j) se += std::exp(static_cast<double>(row[j]) - mx);
    for (std::size_t j = 0; j < c; ++j) {
      out[r * c + j] = static_cast<T>(std::exp(static_cast<double>(row[j]) - mx) / se);
    }
  }
  return out;
}

#define LRSIAM_INSTANTIATE(T)                                                                    \
  template class Var<T>;                                                                         \
  template Var<T> add(const Var<T>&, const Var<T>&);                                             \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                             \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                             \
  template Var<T> scale(const Var<T>&, T);                                                       \
  template Var<T> add_scalar(const Var<T>&, T);                                                  \
  template Var<T> relu(const Var<T>&);                                                           \
  template Var<T> sqrt(const Var<T>&);                                                           \
  template Var<T> sum(const Var<T>&);                                                            \
  template Var<T> sum_squares(const Var<T>&);                                                    \
  template Var<T> add_n(std::span<const Var<T>>);                                                \
  template Var<T> reshape(const Var<T>&, Shape);                                                 \
  template Var<T> slice(const Var<T>&, std::size_t, std::size_t);                                \
  template Var<T> concat(std::span<const Var<T>>, std::size_t);                                  \
  template Var<T> temporal_max(std::span<const Var<T>>);                                         \
  template Var<T> interval_max(const Var<T>&, std::size_t, std::size_t);                         \
  template Var<T> max_pool2d(const Var<T>&, std::size_t, std::size_t);                           \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, std::size_t, std::size_t); \
  template Var<T> fully_connected(const Var<T>&, const Var<T>&, const Var<T>&);                  \
  template Var<T> softmax_cross_entropy(const Var<T>&, std::span<const std::size_t>);            \
  template Var<T> softmax_cross_entropy(const Var<T>&, std::size_t);                             \
  template TensorT<T> softmax(const TensorT<T>&);

LRSIAM_INSTANTIATE(float)
LRSIAM_INSTANTIATE(double)

#undef LRSIAM_INSTANTIATE

}  // namespace lrsiam
