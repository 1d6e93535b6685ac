#pragma once

#include <cstdint>
#include <vector>

#include "iris/params.hpp"

namespace iris {

struct OptimHyper {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Global L2 gradient-norm ceiling applied before the update; 0 disables.
  double clip_norm = 0.0;

  void validate() const;
};

enum class OptimizerKind { AmsGrad, Adam };

/// Per-parameter moments, aligned with ParamSet declaration order.
struct OptState {
  struct Slot {
    Tensor m;
    Tensor v;
    Tensor v_hat;
  };
  std::vector<Slot> slots;
  std::int64_t step = 0;

  static OptState for_params(const ParamSet& params);
};

// m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2;  v_hat <- max(v_hat, v);
// theta <- theta - lr m / (sqrt(v_hat) + eps). No bias correction.
void amsgrad_step(ParamSet& params, OptState& state, const OptimHyper& h);

// Bias-corrected Adam. The v_hat slot is unused.
void adam_step(ParamSet& params, OptState& state, const OptimHyper& h);

void optimizer_step(OptimizerKind kind, ParamSet& params, OptState& state, const OptimHyper& h);

// Rescales all gradients so their joint L2 norm is at most max_norm. Returns the norm before clipping.
double clip_grad_norm(ParamSet& params, double max_norm);

}  // namespace iris
