#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "iris/params.hpp"
#include "iris/tensor.hpp"

namespace iris {

/// Handle to a value recorded on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

class Tape;

/// View handed to a backward closure: the output gradient plus accumulators
/// for every input that needs one.
class BackwardContext {
 public:
  const Tensor& grad_out() const;
  const Tensor& out() const;
  const Tensor& in(std::size_t i) const;
  bool wants(std::size_t i) const;
  // Zero-initialized on first use.
  Tensor& grad_in(std::size_t i);

 private:
  friend class Tape;
  BackwardContext(Tape& tape, int node) : tape_(tape), node_(node) {}
  Tape& tape_;
  int node_;
};

using BackwardFn = std::function<void(BackwardContext&)>;

/// Ordered record of executed operations. Replaying it backward from a scalar
/// loss accumulates gradients into every Parameter bound with param().
/// A tape is single-owner; use one per worker.
class Tape {
 public:
  // With recording off, ops compute values only and backward() is unavailable.
  explicit Tape(bool recording = true) : recording_(recording) {}

  Var constant(Tensor value);
  // Leaf that collects a gradient, readable via grad() after backward().
  Var leaf(Tensor value);
  // Leaf bound to a parameter slot; backward() adds into p.grad.
  Var param(Parameter& p);

  // Used by op implementations.
  Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);

  const Tensor& value(Var v) const;
  const Tensor& grad(Var v) const;
  bool requires_grad(Var v) const;
  bool recording() const { return recording_; }

  // Piecewise ops (relu) fold their active pattern into a running signature when tracking is on,
  // so two evaluations can be compared for a change of linear region.
  void track_regimes(bool on) { track_regimes_ = on; }
  bool tracking_regimes() const { return track_regimes_; }
  void note_regime(std::uint64_t h);
  std::uint64_t regime_signature() const { return regime_; }
  std::size_t size() const { return nodes_.size(); }

  // Loss must hold exactly one element.
  void backward(Var loss);
  // Backpropagate from a non-scalar output with an explicit output gradient.
  void backward(Var out, const Tensor& seed);

 private:
  friend class BackwardContext;
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<int> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  bool recording_;
  bool track_regimes_ = false;
  std::uint64_t regime_ = 0;
  std::vector<Node> nodes_;
};

}  // namespace iris
