#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "lrsiam/autodiff.hpp"

namespace lrsiam {

struct GradcheckOptions {
  double epsilon = 1e-3;
  double tolerance = 1e-3;
  /// 0 checks every coordinate; otherwise a seeded sample of this many per input.
  std::size_t max_coords_per_input = 0;
  std::uint64_t sample_seed = 0;
  /// Skip failing coordinates whose stencil straddles a kink (ReLU, max
  /// switch): detected when central differences at epsilon and 2 epsilon
  /// disagree by more than kink_tolerance relative. Skipped coordinates are
  /// counted.
  bool skip_kinks = false;
  double kink_tolerance = 1e-4;
};

struct GradcheckReport {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  std::size_t coords_skipped = 0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool passed = true;
};

/// |a - n| / max(|a|, |n|, 1e-8)
inline double gradcheck_relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

/// Compares the reverse-mode gradient of a scalar graph against central
/// differences (f(x+e) - f(x-e)) / 2e, coordinate by coordinate.
template <typename T>
GradcheckReport gradcheck(const std::function<Var<T>(std::span<const Var<T>>)>& graph,
                          const std::vector<TensorT<T>>& inputs, const GradcheckOptions& opt) {
  if (!(opt.epsilon > 0.0)) throw std::invalid_argument("gradcheck: epsilon must be > 0");

  std::vector<Var<T>> vars;
  vars.reserve(inputs.size());
  for (const auto& t : inputs) vars.emplace_back(t, true);
  Var<T> out = graph(vars);
  if (out.value().size() != 1) {
    throw ShapeError("gradcheck: graph output must be scalar, got " + shape_str(out.shape()));
  }
  out.backward();

  auto eval = [&](const std::vector<TensorT<T>>& xs) {
    NoGradGuard guard;
    std::vector<Var<T>> cs;
    cs.reserve(xs.size());
    for (const auto& t : xs) cs.emplace_back(t, false);
    return static_cast<double>(graph(cs).value()[0]);
  };

  GradcheckReport rep;
  std::mt19937_64 rng(opt.sample_seed);
  std::vector<TensorT<T>> work = inputs;
  for (std::size_t in = 0; in < inputs.size(); ++in) {
    const std::size_t n = inputs[in].size();
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (opt.max_coords_per_input > 0 && n > opt.max_coords_per_input) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opt.max_coords_per_input);
      std::sort(coords.begin(), coords.end());
    }
    const TensorT<T>& analytic = vars[in].grad();
    for (std::size_t i : coords) {
      const T orig = work[in][i];
      auto central = [&](double h) {
        work[in][i] = static_cast<T>(orig + h);
        const double fp = eval(work);
        work[in][i] = static_cast<T>(orig - h);
        const double fm = eval(work);
        work[in][i] = orig;
        return (fp - fm) / (2.0 * h);
      };
      const double numeric = central(opt.epsilon);
      const double a = static_cast<double>(analytic[i]);
      const double rel = gradcheck_relative_error(a, numeric);
      // The wider stencil is only needed to excuse a coordinate that fails.
      if (opt.skip_kinks && rel >= opt.tolerance) {
        const double wide = central(2.0 * opt.epsilon);
        if (gradcheck_relative_error(wide, numeric) > opt.kink_tolerance) {
          ++rep.coords_skipped;
          continue;
        }
      }
      ++rep.coords_checked;
      if (rel >= rep.max_rel_error) {
        rep.max_rel_error = rel;
        rep.worst_input = in;
        rep.worst_index = i;
        rep.worst_analytic = a;
        rep.worst_numeric = numeric;
      }
    }
  }
  rep.passed = rep.max_rel_error < opt.tolerance;
  return rep;
}

}  // namespace lrsiam
