#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <fmt/core.h>
#include <fmt/ranges.h>

#include "iotids/error.hpp"

namespace iotids::nn {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) { return fmt::format("[{}]", fmt::join(shape, "x")); }

/// Dense row-major tensor. Convolution inputs use NHWC, kernels HWIO
/// (height, width, in-channels, out-channels).
template <typename Scalar>
class Tensor {
 public:
  using Storage = Vector<Scalar>;

  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(Storage::Zero(shape_size(shape_))) {
    check_shape();
  }
  Tensor(Shape shape, Storage data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    if (data_.size() != shape_size(shape_)) {
      throw std::invalid_argument(
          fmt::format("tensor data has {} values but shape {} needs {}", data_.size(), shape_string(shape_),
                      shape_size(shape_)));
    }
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor constant(Shape shape, Scalar value) {
    Tensor t(std::move(shape));
    t.data_.setConstant(value);
    return t;
  }
  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Storage& data() { return data_; }
  const Storage& data() const { return data_; }
  Scalar* raw() { return data_.data(); }
  const Scalar* raw() const { return data_.data(); }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  /// Row-major view with the last axis as columns.
  Eigen::Map<RowMatrix<Scalar>> matrix() { return {raw(), rows(), cols()}; }
  Eigen::Map<const RowMatrix<Scalar>> matrix() const { return {raw(), rows(), cols()}; }

  /// NHWC element access.
  Scalar& at(Index n, Index h, Index w, Index c) { return data_[((n * dim(1) + h) * dim(2) + w) * dim(3) + c]; }
  Scalar at(Index n, Index h, Index w, Index c) const {
    return data_[((n * dim(1) + h) * dim(2) + w) * dim(3) + c];
  }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>());
  }

 private:
  Index cols() const { return shape_.empty() ? 1 : shape_.back(); }
  Index rows() const { return cols() == 0 ? 0 : size() / cols(); }
  void check_shape() const {
    for (Index d : shape_) {
      if (d <= 0) throw std::invalid_argument(fmt::format("invalid tensor shape {}", shape_string(shape_)));
    }
  }

  Shape shape_;
  Storage data_;
};

/// A named tensor owned by a model. Non-trainable parameters (batch-norm
/// running statistics) are checkpointed but never receive gradients.
template <typename Scalar>
struct Parameter {
  std::string name;
  Tensor<Scalar> value;
  Tensor<Scalar> grad;
  bool trainable = true;

  void zero_grad() {
    if (grad.shape() != value.shape()) grad = Tensor<Scalar>::zeros_like(value);
    grad.data().setZero();
  }
};

}  // namespace iotids::nn
