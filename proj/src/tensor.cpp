#include "iris/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "iris/error.hpp"

namespace iris {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int e : shape) {
    require(e >= 0, "negative extent in shape " + shape_str(shape));
    n *= static_cast<std::size_t>(e);
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
  require(data_.size() == shape_numel(shape_), "tensor data length " + std::to_string(data_.size()) +
                                                   " does not match shape " + shape_str(shape_));
}

int Tensor::dim(int axis) const {
  const int r = rank();
  if (axis < 0) axis += r;
  require(axis >= 0 && axis < r, "axis out of range for shape " + shape_str(shape_));
  return shape_[static_cast<std::size_t>(axis)];
}

std::size_t Tensor::offset(std::initializer_list<int> idx) const {
  require(idx.size() == shape_.size(), "index rank mismatch for shape " + shape_str(shape_));
  std::size_t off = 0;
  std::size_t axis = 0;
  for (int i : idx) {
    require(i >= 0 && i < shape_[axis], "index out of range for shape " + shape_str(shape_));
    off = off * static_cast<std::size_t>(shape_[axis]) + static_cast<std::size_t>(i);
    ++axis;
  }
  return off;
}

float& Tensor::at(std::initializer_list<int> idx) { return data_[offset(idx)]; }
float Tensor::at(std::initializer_list<int> idx) const { return data_[offset(idx)]; }

Tensor Tensor::reshaped(Shape shape) const {
  require(shape_numel(shape) == data_.size(),
          "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

}  // namespace iris
