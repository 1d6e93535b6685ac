#include "iris/params.hpp"

#include <cstring>

#include "iris/error.hpp"

namespace iris {

Parameter& ParamSet::add(std::string name, Tensor value) {
  require(!contains(name), "duplicate parameter name '" + name + "'");
  Tensor grad = Tensor::zeros(value.shape());
  params_.push_back(Parameter{std::move(name), std::move(value), std::move(grad)});
  return params_.back();
}

Parameter& ParamSet::get(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return p;
  throw ContractViolation("unknown parameter '" + name + "'");
}

const Parameter& ParamSet::get(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return p;
  throw ContractViolation("unknown parameter '" + name + "'");
}

bool ParamSet::contains(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return true;
  return false;
}

void ParamSet::zero_grad() {
  for (auto& p : params_) {
    if (p.grad.shape() != p.value.shape())
      p.grad = Tensor::zeros(p.value.shape());
    else
      p.grad.fill(0.0f);
  }
}

std::size_t ParamSet::numel() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

// Bitwise comparison of names, shapes and values; gradients are ignored.
bool operator==(const ParamSet& a, const ParamSet& b) {
  if (a.params_.size() != b.params_.size()) return false;
  for (std::size_t i = 0; i < a.params_.size(); ++i) {
    const auto& pa = a.params_[i];
    const auto& pb = b.params_[i];
    if (pa.name != pb.name || pa.value.shape() != pb.value.shape()) return false;
    if (std::memcmp(pa.value.data().data(), pb.value.data().data(), pa.value.size() * sizeof(float)) != 0)
      return false;
  }
  return true;
}

}  // namespace iris
