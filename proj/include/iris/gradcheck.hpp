#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "iris/autograd.hpp"
#include "iris/params.hpp"

namespace iris {

struct GradCheckOptions {
  double epsilon = 1e-3;
  double tolerance = 1e-3;
  // Entries probed per tensor; 0 probes every entry. Probed entries are drawn with `seed`.
  std::size_t max_entries = 0;
  std::uint64_t seed = 0;
  // When a +/- epsilon evaluation switches a relu on or off, difference on the other side only;
  // probes where both sides switch are skipped.
  bool skip_kinks = true;
};

/// Outcome of comparing tape gradients against central differences.
/// Relative error per entry is |analytic - numeric| / max(1, |analytic|, |numeric|).
struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t entries_checked = 0;
  std::size_t entries_skipped = 0;
  std::string worst_entry;
  double tolerance = 0.0;
  // At most one probe in ten may be skipped.
  bool passed() const {
    return entries_checked > 0 && max_rel_error < tolerance && entries_skipped * 10 <= entries_checked + entries_skipped;
  }
};

// Builds the graph under test from leaf variables. A non-scalar output is reduced
// with fixed random weights (accumulated in double) before differencing.
using LeafGraph = std::function<Var(Tape&, std::span<const Var>)>;
using ParamGraph = std::function<Var(Tape&)>;

GradCheckReport finite_difference_check(const LeafGraph& graph, std::vector<Tensor> inputs,
                                        const GradCheckOptions& opts = {});

// Differentiates with respect to every tensor of `params` (values are restored afterwards).
GradCheckReport finite_difference_check(const ParamGraph& graph, ParamSet& params,
                                        const GradCheckOptions& opts = {});

}  // namespace iris
