#include "iris/autograd.hpp"

#include "iris/error.hpp"

namespace iris {

const Tensor& BackwardContext::grad_out() const { return tape_.nodes_[node_].grad; }
const Tensor& BackwardContext::out() const { return tape_.nodes_[node_].value; }

const Tensor& BackwardContext::in(std::size_t i) const {
  return tape_.nodes_[tape_.nodes_[node_].inputs.at(i)].value;
}

bool BackwardContext::wants(std::size_t i) const {
  return tape_.nodes_[tape_.nodes_[node_].inputs.at(i)].requires_grad;
}

Tensor& BackwardContext::grad_in(std::size_t i) {
  auto& input = tape_.nodes_[tape_.nodes_[node_].inputs.at(i)];
  if (input.grad.shape() != input.value.shape()) input.grad = Tensor::zeros(input.value.shape());
  return input.grad;
}

void Tape::note_regime(std::uint64_t h) {
  regime_ ^= h + 0x9e3779b97f4a7c15ULL + (regime_ << 6) + (regime_ >> 2);
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, {}, nullptr, false});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, {}, nullptr, recording_});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::param(Parameter& p) {
  nodes_.push_back(Node{p.value, {}, {}, {}, &p, recording_});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  bool needs = false;
  for (Var v : inputs) {
    require(v.id >= 0 && v.id < static_cast<int>(nodes_.size()), "tape input does not belong to this tape");
    needs = needs || nodes_[static_cast<std::size_t>(v.id)].requires_grad;
  }
  if (recording_ && needs) {
    node.requires_grad = true;
    node.backward = std::move(backward);
    node.inputs.reserve(inputs.size());
    for (Var v : inputs) node.inputs.push_back(v.id);
  }
  nodes_.push_back(std::move(node));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

const Tensor& Tape::value(Var v) const {
  require(v.id >= 0 && v.id < static_cast<int>(nodes_.size()), "invalid tape variable");
  return nodes_[static_cast<std::size_t>(v.id)].value;
}

const Tensor& Tape::grad(Var v) const {
  require(v.id >= 0 && v.id < static_cast<int>(nodes_.size()), "invalid tape variable");
  return nodes_[static_cast<std::size_t>(v.id)].grad;
}

bool Tape::requires_grad(Var v) const {
  require(v.id >= 0 && v.id < static_cast<int>(nodes_.size()), "invalid tape variable");
  return nodes_[static_cast<std::size_t>(v.id)].requires_grad;
}

void Tape::backward(Var loss) {
  require(value(loss).size() == 1, "backward() needs a scalar loss, got shape " + shape_str(value(loss).shape()));
  backward(loss, Tensor(value(loss).shape(), 1.0f));
}

void Tape::backward(Var out, const Tensor& seed) {
  require(recording_, "backward() on a non-recording tape");
  require(seed.shape() == value(out).shape(), "backward seed shape mismatch");
  for (auto& n : nodes_) n.grad = Tensor();
  auto& root = nodes_[static_cast<std::size_t>(out.id)];
  if (!root.requires_grad) return;
  root.grad = seed;
  for (int i = out.id; i >= 0; --i) {
    auto& node = nodes_[static_cast<std::size_t>(i)];
    if (!node.requires_grad || node.grad.empty()) continue;
    if (node.backward) {
      BackwardContext ctx(*this, i);
      node.backward(ctx);
    }
    if (node.param != nullptr) {
      auto& pg = node.param->grad;
      if (pg.shape() != node.value.shape()) pg = Tensor::zeros(node.value.shape());
      for (std::size_t k = 0; k < pg.size(); ++k) pg[k] += node.grad[k];
    }
  }
}

}  // namespace iris
