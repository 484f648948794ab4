#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace ear {

// All numerics in the toolkit run in double precision. Desk-scale models are
// small enough that the cost is irrelevant, and it keeps finite-difference
// gradient checks and run-to-run reproducibility free of dtype concerns.
using Scalar = double;

// Dense row-major n-dimensional array. Value semantics: copies copy data.
// A rank-5 tensor with axes (batch, time, channel, height, width) is the
// clip layout used throughout; see temporal_shift and Model::forward_clip.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::int64_t> shape);
  Tensor(std::vector<std::int64_t> shape, Scalar fill_value);

  std::int64_t rank() const { return static_cast<std::int64_t>(shape_.size()); }
  std::int64_t dim(std::int64_t axis) const;
  const std::vector<std::int64_t>& shape() const { return shape_; }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  bool defined() const { return !shape_.empty(); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  Scalar& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  Scalar operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  // Multi-index access; bounds-checked. Intended for tests and small code
  // paths, hot loops index the flat buffer directly.
  Scalar& at(std::initializer_list<std::int64_t> idx);
  Scalar at(std::initializer_list<std::int64_t> idx) const;

  // Reinterprets the shape in place; element count must be preserved.
  // Row-major layout makes folding (N,T,C,H,W) <-> (N*T,C,H,W) a pure
  // metadata change.
  Tensor& reshape(std::vector<std::int64_t> new_shape);

  void fill(Scalar v);
  void zero() { fill(0.0); }

  void add_scaled(const Tensor& other, Scalar scale);  // this += scale * other
  void scale(Scalar s);

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;

  std::string shape_str() const;

 private:
  std::int64_t flat_index(std::initializer_list<std::int64_t> idx) const;

  std::vector<std::int64_t> shape_;
  std::vector<Scalar> data_;
};

std::string shape_to_string(const std::vector<std::int64_t>& shape);

}  // namespace ear
