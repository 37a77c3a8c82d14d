#include "lrsiam/metrics.hpp"

#include <limits>
#include <stdexcept>
#include <string>

namespace lrsiam {

Metrics compute_metrics(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                        std::size_t num_classes) {
  if (truth.empty()) throw std::invalid_argument("metrics: empty split");
  if (truth.size() != predicted.size()) {
    throw std::invalid_argument("metrics: " + std::to_string(truth.size()) + " targets vs " +
                                std::to_string(predicted.size()) + " predictions");
  }
  if (num_classes == 0) throw std::invalid_argument("metrics: num_classes must be positive");
  Metrics m;
  m.num_classes = num_classes;
  m.samples = truth.size();
  m.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= num_classes || predicted[i] >= num_classes) {
      throw std::out_of_range("metrics: label out of range at sample " + std::to_string(i));
    }
    ++m.confusion[truth[i]][predicted[i]];
    if (truth[i] == predicted[i]) ++correct;
  }
  m.accuracy = double(correct) / double(truth.size());
  m.per_class_accuracy.resize(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::size_t total = 0;
    for (std::size_t p = 0; p < num_classes; ++p) total += m.confusion[c][p];
    m.per_class_accuracy[c] = total ? double(m.confusion[c][c]) / double(total)
                                    : std::numeric_limits<double>::quiet_NaN();
  }
  if (num_classes == 2) {
    m.binary = true;
    const double tp = double(m.confusion[1][1]);
    const double fp = double(m.confusion[0][1]);
    const double fn = double(m.confusion[1][0]);
    m.precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    m.recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    m.f1 = m.precision + m.recall > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  }
  return m;
}

}  // namespace lrsiam
