#include "iris/optim.hpp"

#include <algorithm>
#include <cmath>

#include "iris/error.hpp"

namespace iris {

void OptimHyper::validate() const {
  require(lr > 0.0, "learning rate must be positive");
  require(beta1 >= 0.0 && beta1 < 1.0, "beta1 must lie in [0,1)");
  require(beta2 >= 0.0 && beta2 < 1.0, "beta2 must lie in [0,1)");
  require(epsilon > 0.0, "epsilon must be positive");
  require(clip_norm >= 0.0, "clip_norm must be non-negative");
}

OptState OptState::for_params(const ParamSet& params) {
  OptState s;
  for (const auto& p : params.items())
    s.slots.push_back(Slot{Tensor::zeros(p.value.shape()), Tensor::zeros(p.value.shape()), Tensor::zeros(p.value.shape())});
  return s;
}

namespace {

void check_aligned(const ParamSet& params, const OptState& state) {
  require(state.slots.size() == params.size(), "optimizer state has " + std::to_string(state.slots.size()) +
                                                   " slots for " + std::to_string(params.size()) + " parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params.items()[i];
    const auto& s = state.slots[i];
    require(p.grad.shape() == p.value.shape(), "gradient shape mismatch for parameter '" + p.name + "'");
    require(s.m.shape() == p.value.shape() && s.v.shape() == p.value.shape() && s.v_hat.shape() == p.value.shape(),
            "optimizer state shape mismatch for parameter '" + p.name + "'");
    for (float g : p.grad.data())
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + p.name + "'");
  }
}

}  // namespace

double clip_grad_norm(ParamSet& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params.items())
    for (float g : p.grad.data()) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const auto f = static_cast<float>(max_norm / norm);
    for (auto& p : params.items())
      for (auto& g : p.grad.data()) g *= f;
  }
  return norm;
}

void amsgrad_step(ParamSet& params, OptState& state, const OptimHyper& h) {
  h.validate();
  check_aligned(params, state);
  if (h.clip_norm > 0.0) clip_grad_norm(params, h.clip_norm);
  ++state.step;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params.items()[k];
    auto& s = state.slots[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      const double m = h.beta1 * s.m[i] + (1.0 - h.beta1) * g;
      const double v = h.beta2 * s.v[i] + (1.0 - h.beta2) * g * g;
      s.m[i] = static_cast<float>(m);
      s.v[i] = static_cast<float>(v);
      s.v_hat[i] = std::max(s.v_hat[i], s.v[i]);
      p.value[i] = static_cast<float>(p.value[i] - h.lr * m / (std::sqrt(static_cast<double>(s.v_hat[i])) + h.epsilon));
    }
  }
}

void adam_step(ParamSet& params, OptState& state, const OptimHyper& h) {
  h.validate();
  check_aligned(params, state);
  if (h.clip_norm > 0.0) clip_grad_norm(params, h.clip_norm);
  ++state.step;
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params.items()[k];
    auto& s = state.slots[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      const double m = h.beta1 * s.m[i] + (1.0 - h.beta1) * g;
      const double v = h.beta2 * s.v[i] + (1.0 - h.beta2) * g * g;
      s.m[i] = static_cast<float>(m);
      s.v[i] = static_cast<float>(v);
      p.value[i] = static_cast<float>(p.value[i] - h.lr * (m / c1) / (std::sqrt(v / c2) + h.epsilon));
    }
  }
}

void optimizer_step(OptimizerKind kind, ParamSet& params, OptState& state, const OptimHyper& h) {
  if (kind == OptimizerKind::AmsGrad)
    amsgrad_step(params, state, h);
  else
    adam_step(params, state, h);
}

}  // namespace iris
