#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace lrsiam {

struct Metrics {
  std::size_t num_classes = 0;
  std::size_t samples = 0;
  double accuracy = 0.0;
  std::vector<double> per_class_accuracy;  // NaN for classes absent from the targets
  std::vector<std::vector<std::size_t>> confusion;  // [truth][prediction]
  // Two-class tasks only; class 1 is the positive class.
  bool binary = false;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Metrics of predictions against targets. Throws on empty input or a
/// label outside [0, num_classes).
Metrics compute_metrics(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                        std::size_t num_classes);

}  // namespace lrsiam
