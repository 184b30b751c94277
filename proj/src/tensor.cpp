#include "mvp/tensor.hpp"

#include <cmath>
#include <algorithm>
#include <cstring>
#include <functional>
#include <numeric>

#include "mvp/error.hpp"

namespace mvp {

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

namespace {

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

}  // namespace

Tensor::Tensor(Shape shape, std::vector<Real> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_.size() > 2) {
    throw DimensionError("tensor rank " + std::to_string(shape_.size()) +
                         " unsupported, shape " + shape_string(shape_));
  }
  if (element_count(shape_) != data_.size()) {
    throw DimensionError("shape " + shape_string(shape_) + " holds " +
                         std::to_string(element_count(shape_)) +
                         " elements but data has " +
                         std::to_string(data_.size()));
  }
}

Tensor Tensor::zeros(Shape shape) { return filled(std::move(shape), 0); }

Tensor Tensor::filled(Shape shape, Real value) {
  const std::size_t n = element_count(shape);
  return Tensor(std::move(shape), std::vector<Real>(n, value));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols,
                      std::vector<Real> data) {
  return Tensor({rows, cols}, std::move(data));
}

Tensor Tensor::from_rows(
    std::initializer_list<std::initializer_list<Real>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<Real> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) {
      throw DimensionError("ragged row initializer");
    }
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

Tensor Tensor::scalar(Real value) { return Tensor({1, 1}, {value}); }

Tensor Tensor::checked(Shape shape, std::vector<Real> data) {
  Tensor t(std::move(shape), std::move(data));
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(t.data_[i])) {
      throw DataError("non-finite value at element " + std::to_string(i) +
                      " of tensor " + shape_string(t.shape_));
    }
  }
  return t;
}


void Tensor::add_in_place(const Tensor& other, Real scale) {
  if (other.size() != size()) {
    throw DimensionError("cannot accumulate " + shape_string(other.shape_) +
                         " into " + shape_string(shape_));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) {
    data_[i] += scale * other.data_[i];
  }
}

void Tensor::fill(Real value) {
  std::fill(data_.begin(), data_.end(), value);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](Real v) { return std::isfinite(v); });
}

bool Tensor::identical(const Tensor& other) const {
  return shape_ == other.shape_ &&
         (data_.empty() || std::memcmp(data_.data(), other.data_.data(),
                                       data_.size() * sizeof(Real)) == 0);
}

Param::Param(std::string name, Tensor value)
    : name(std::move(name)),
      value(std::move(value)),
      grad(Tensor::zeros(this->value.shape())) {}

}  // namespace mvp
