#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "lrsiam/autodiff.hpp"

namespace lrsiam {

template <typename T>
struct Parameter {
  std::string name;
  Var<T> var;
  bool trainable = true;
};

/// Ordered, uniquely named parameters. Order is insertion order and is the
/// order used for checkpoints, optimiser state and checksums.
template <typename T>
class ParamSet {
 public:
  Var<T>& add(const std::string& name, TensorT<T> value, bool trainable = true) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    index_[name] = params_.size();
    params_.push_back({name, Var<T>(std::move(value), trainable), trainable});
    return params_.back().var;
  }

  /// Registers an existing variable (shares its node).
  Var<T>& add_var(const std::string& name, Var<T> var, bool trainable = true) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    index_[name] = params_.size();
    params_.push_back({name, std::move(var), trainable});
    return params_.back().var;
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  const Var<T>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return params_[it->second].var;
  }
  Var<T>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return params_[it->second].var;
  }

  std::vector<Parameter<T>>& items() { return params_; }
  const std::vector<Parameter<T>>& items() const { return params_; }
  std::size_t size() const { return params_.size(); }

  void zero_grad() {
    for (auto& p : params_) p.var.zero_grad();
  }

  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.var.value().size();
    return n;
  }

  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& p : params_) out.add(p.name, p.var.value().template cast<U>(), p.trainable);
    return out;
  }

  /// Deep copy of values (fresh nodes, no gradients).
  ParamSet clone() const { return cast<T>(); }

  /// Copies values from `other`, which must have identical names and shapes.
  void assign_values(const ParamSet& other) {
    for (auto& p : params_) {
      const auto& src = other.get(p.name).value();
      if (src.shape() != p.var.value().shape()) {
        throw ShapeError("assign_values: " + p.name + " " + shape_str(src.shape()) + " vs " +
                         shape_str(p.var.value().shape()));
      }
      p.var.mutable_value() = src;
    }
  }

 private:
  std::vector<Parameter<T>> params_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace lrsiam
