#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace mvp {

#ifdef MVP_SINGLE_PRECISION
using Real = float;
#else
using Real = double;
#endif

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

/// Dense row-major tensor of rank 0, 1 or 2. Rank-1 tensors behave as a
/// single row wherever a matrix is expected.
class Tensor {
 public:
  Tensor() = default;
  /// Throws DimensionError when product(shape) != data.size().
  Tensor(Shape shape, std::vector<Real> data);

  static Tensor zeros(Shape shape);
  static Tensor filled(Shape shape, Real value);
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<Real> data);
  static Tensor from_rows(
      std::initializer_list<std::initializer_list<Real>> rows);
  static Tensor scalar(Real value);
  /// Constructor for data read from outside the process: rejects NaN/Inf
  /// with a DataError.
  static Tensor checked(Shape shape, std::vector<Real> data);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  std::size_t rows() const { return shape_.size() == 2 ? shape_[0] : 1; }
  std::size_t cols() const {
    return shape_.size() == 2 ? shape_[1] : shape_.size() == 1 ? shape_[0] : 1;
  }

  Real operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols() + c];
  }
  Real& operator()(std::size_t r, std::size_t c) {
    return data_[r * cols() + c];
  }
  Real operator[](std::size_t i) const { return data_[i]; }
  Real& operator[](std::size_t i) { return data_[i]; }

  std::span<const Real> data() const { return data_; }
  std::span<Real> data() { return data_; }
  std::span<const Real> row(std::size_t r) const {
    return std::span<const Real>(data_).subspan(r * cols(), cols());
  }
  std::span<Real> row(std::size_t r) {
    return std::span<Real>(data_).subspan(r * cols(), cols());
  }

  /// Element-wise accumulate; shapes must hold the same number of elements.
  void add_in_place(const Tensor& other, Real scale = 1);
  void fill(Real value);

  bool all_finite() const;
  /// Bitwise comparison of shape and payload.
  bool identical(const Tensor& other) const;

 private:
  Shape shape_;
  std::vector<Real> data_;
};

/// A trainable tensor plus its accumulated gradient.
struct Param {
  Param() = default;
  Param(std::string name, Tensor value);

  void zero_grad() { grad.fill(0); }

  std::string name;
  Tensor value;
  Tensor grad;
};

}  // namespace mvp
