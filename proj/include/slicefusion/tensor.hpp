#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace slicefusion {

using Shape = std::vector<std::size_t>;

/// Thrown when operand extents are incompatible with an operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major tensor of doubles. The last axis is contiguous.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }
  static Tensor vector(std::initializer_list<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_.back() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_.back() + c]; }

  /// Same data, new extents; the element count must be unchanged.
  Tensor reshaped(Shape shape) const;
  void fill(double value);
  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

double max_abs_diff(const Tensor& a, const Tensor& b);

// Plain kernels, no gradient recording. The autograd graph wraps these.

/// a[m x k] * b[k x n]
Tensor matmul(const Tensor& a, const Tensor& b);
/// a[m x k] * b[n x k]^T
Tensor matmul_bt(const Tensor& a, const Tensor& b);
/// a[k x m]^T * b[k x n]
Tensor matmul_at(const Tensor& a, const Tensor& b);

/// Numerically stable softmax of a rank-1 tensor.
Tensor softmax(const Tensor& v);

/// Mean over `axis`; the axis is removed from the result shape.
Tensor mean_pool(const Tensor& t, std::size_t axis = 0);
/// Elementwise max over `axis`; ties resolve to the lowest index.
Tensor max_pool(const Tensor& t, std::size_t axis = 0);
/// Index of the winning entry along `axis` for each output element of max_pool.
std::vector<std::size_t> max_pool_argmax(const Tensor& t, std::size_t axis = 0);

/// Output row j is input row floor(j / factor) along axis 0.
Tensor repeat_blocks(const Tensor& t, std::size_t factor);

/// Concatenate along `axis`; all other extents must agree.
Tensor concat(const Tensor& a, const Tensor& b, std::size_t axis);

}  // namespace slicefusion
