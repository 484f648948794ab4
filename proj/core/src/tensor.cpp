#include "ear/tensor.hpp"

#include <cmath>
#include <sstream>

#include "ear/errors.hpp"

namespace ear {

namespace {
std::int64_t checked_numel(const std::vector<std::int64_t>& shape) {
  std::int64_t n = 1;
  for (std::int64_t d : shape) {
    if (d <= 0) {
      throw ShapeError("tensor axis lengths must be strictly positive, got " +
                       shape_to_string(shape));
    }
    n *= d;
  }
  return n;
}
}  // namespace

std::string shape_to_string(const std::vector<std::int64_t>& shape) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

Tensor::Tensor(std::vector<std::int64_t> shape)
    : shape_(std::move(shape)),
      data_(static_cast<std::size_t>(checked_numel(shape_)), 0.0) {}

Tensor::Tensor(std::vector<std::int64_t> shape, Scalar fill_value)
    : shape_(std::move(shape)),
      data_(static_cast<std::size_t>(checked_numel(shape_)), fill_value) {}

std::int64_t Tensor::dim(std::int64_t axis) const {
  if (axis < 0 || axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                     shape_str());
  }
  return shape_[static_cast<std::size_t>(axis)];
}

std::int64_t Tensor::flat_index(std::initializer_list<std::int64_t> idx) const {
  if (static_cast<std::int64_t>(idx.size()) != rank()) {
    throw ShapeError("index rank " + std::to_string(idx.size()) +
                     " does not match tensor rank " + std::to_string(rank()));
  }
  std::int64_t flat = 0;
  std::size_t axis = 0;
  for (std::int64_t i : idx) {
    const std::int64_t extent = shape_[axis];
    if (i < 0 || i >= extent) {
      throw ShapeError("index " + std::to_string(i) + " out of range on axis " +
                       std::to_string(axis) + " of " + shape_str());
    }
    flat = flat * extent + i;
    ++axis;
  }
  return flat;
}

Scalar& Tensor::at(std::initializer_list<std::int64_t> idx) {
  return data_[static_cast<std::size_t>(flat_index(idx))];
}

Scalar Tensor::at(std::initializer_list<std::int64_t> idx) const {
  return data_[static_cast<std::size_t>(flat_index(idx))];
}

Tensor& Tensor::reshape(std::vector<std::int64_t> new_shape) {
  const std::int64_t n = checked_numel(new_shape);
  if (n != numel()) {
    throw ShapeError("reshape from " + shape_str() + " to " +
                     shape_to_string(new_shape) + " changes element count");
  }
  shape_ = std::move(new_shape);
  return *this;
}

void Tensor::fill(Scalar v) {
  for (auto& x : data_) x = v;
}

void Tensor::add_scaled(const Tensor& other, Scalar s) {
  if (!same_shape(other)) {
    throw ShapeError("add_scaled shape mismatch: " + shape_str() + " vs " +
                     other.shape_str());
  }
  const Scalar* src = other.data();
  Scalar* dst = data();
  const std::int64_t n = numel();
  for (std::int64_t i = 0; i < n; ++i) dst[i] += s * src[i];
}

void Tensor::scale(Scalar s) {
  for (auto& x : data_) x *= s;
}

bool Tensor::all_finite() const {
  for (Scalar x : data_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

std::string Tensor::shape_str() const { return shape_to_string(shape_); }

}  // namespace ear
