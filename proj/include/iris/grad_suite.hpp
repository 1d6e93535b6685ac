#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "iris/gradcheck.hpp"

namespace iris {

struct GradCase {
  std::string name;    // "<module>.<op>"
  std::function<GradCheckReport(std::uint64_t seed, const GradCheckOptions& opts)> run;
};

// Every differentiable operation of the tensor, detection and recognition layers.
const std::vector<GradCase>& gradient_cases();

struct GradCaseSummary {
  std::string name;
  int seeds = 0;
  double max_rel_error = 0.0;
  std::size_t entries_checked = 0;
  std::size_t entries_skipped = 0;
  std::string worst_entry;
  bool passed = false;
};

// Runs each case whose name contains `filter` over seeds 0..seeds-1.
std::vector<GradCaseSummary> run_gradient_suite(int seeds, double epsilon = 1e-3, double tolerance = 1e-3,
                                                const std::string& filter = "");

}  // namespace iris
