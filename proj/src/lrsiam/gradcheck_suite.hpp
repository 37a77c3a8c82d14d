#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace lrsiam {

struct GradcheckCaseResult {
  std::string name;
  std::size_t seeds = 0;
  std::size_t coords = 0;
  std::size_t skipped = 0;  // kink-straddling coordinates (full graph only)
  double max_rel_error = 0.0;
  bool passed = true;
  double seconds = 0.0;
};

struct GradcheckSuiteOptions {
  std::size_t seeds = 20;
  std::uint64_t base_seed = 0;
  double tolerance = 1e-3;
  double epsilon = 1e-6;
  std::size_t full_graph_coords = 6;  // sampled coordinates per parameter tensor
  double max_skipped_fraction = 0.05;
};

/// Central-difference checks (double precision) of every differentiable op
/// and of the full embed + multi-siamese + classification graph on a reduced
/// architecture, each over `seeds` random instances.
std::vector<GradcheckCaseResult> run_gradcheck_suite(
    const GradcheckSuiteOptions& opt = {},
    const std::function<void(const GradcheckCaseResult&)>& on_case = {});

/// Names of the cases run_gradcheck_suite covers, in order.
std::vector<std::string> gradcheck_case_names();

}  // namespace lrsiam
