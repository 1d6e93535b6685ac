#pragma once

#include <string>
#include <vector>

#include "iris/tensor.hpp"

namespace iris {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

/// Named learnable tensors in declaration order. Element addresses stay valid
/// until the next add(), so build the set fully before recording forward passes.
class ParamSet {
 public:
  Parameter& add(std::string name, Tensor value);

  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::vector<Parameter>& items() { return params_; }
  const std::vector<Parameter>& items() const { return params_; }
  std::size_t size() const { return params_.size(); }

  void zero_grad();
  std::size_t numel() const;

  friend bool operator==(const ParamSet& a, const ParamSet& b);

 private:
  std::vector<Parameter> params_;
};

}  // namespace iris
