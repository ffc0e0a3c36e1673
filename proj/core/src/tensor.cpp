#include "gnndiff/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <sstream>

#include "gnndiff/error.hpp"

namespace gnndiff {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {
  for (auto d : shape_)
    if (d == 0) throw DimensionError("tensor shape " + shape_str(shape_) + " has a zero extent");
}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size())
    throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_str(shape_));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<float> values) {
  return Tensor({rows, cols}, std::vector<float>(values));
}

Tensor Tensor::vector(std::initializer_list<float> values) {
  return Tensor({values.size()}, std::vector<float>(values));
}

std::size_t Tensor::rows() const {
  if (shape_.size() != 2) throw DimensionError("expected a matrix, got shape " + shape_str(shape_));
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (shape_.size() != 2) throw DimensionError("expected a matrix, got shape " + shape_str(shape_));
  return shape_[1];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel())
    throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::add_inplace(const Tensor& other) {
  if (other.shape_ != shape_)
    throw DimensionError("accumulate " + shape_str(other.shape_) + " into " + shape_str(shape_));
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
}

}  // namespace gnndiff
