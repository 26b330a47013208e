#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "iotids/nn/tensor.hpp"

namespace iotids::nn {

namespace detail {

template <typename Scalar>
void check_finite_grad(const Parameter<Scalar>& p) {
  if (!p.grad.data().allFinite()) {
    throw std::runtime_error(fmt::format("non-finite gradient in parameter '{}'", p.name));
  }
}

template <typename Scalar>
bool has_grad(const Parameter<Scalar>& p) {
  return p.trainable && p.grad.shape() == p.value.shape();
}

}  // namespace detail

struct AdamOptions {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// m = b1 m + (1 - b1) g;  v = b2 v + (1 - b2) g^2;
/// w -= lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
template <typename Scalar>
class Adam {
 public:
  explicit Adam(std::vector<Parameter<Scalar>*> params, AdamOptions options = {})
      : params_(std::move(params)), options_(options) {
    if (!(options_.learning_rate >= 0.0) || !std::isfinite(options_.learning_rate)) {
      throw std::invalid_argument(fmt::format("adam: invalid learning rate {}", options_.learning_rate));
    }
    for (auto* p : params_) {
      m_.push_back(Vector<Scalar>::Zero(p->value.size()));
      v_.push_back(Vector<Scalar>::Zero(p->value.size()));
    }
  }

  /// Throws std::runtime_error naming the parameter if a gradient is not finite;
  /// nothing is updated in that case.
  void step() {
    for (auto* p : params_) {
      if (detail::has_grad(*p)) detail::check_finite_grad(*p);
    }
    ++t_;
    const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
    const auto b1 = static_cast<Scalar>(options_.beta1);
    const auto b2 = static_cast<Scalar>(options_.beta2);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = *params_[i];
      if (!detail::has_grad(p)) continue;
      const auto& g = p.grad.data();
      m_[i] = b1 * m_[i] + (Scalar(1) - b1) * g;
      v_[i] = b2 * v_[i] + (Scalar(1) - b2) * g.cwiseAbs2();
      const auto m_hat = m_[i].array() / static_cast<Scalar>(c1);
      const auto v_hat = v_[i].array() / static_cast<Scalar>(c2);
      p.value.data().array() -=
          static_cast<Scalar>(options_.learning_rate) * m_hat / (v_hat.sqrt() + static_cast<Scalar>(options_.epsilon));
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  long steps() const { return t_; }

 private:
  std::vector<Parameter<Scalar>*> params_;
  AdamOptions options_;
  std::vector<Vector<Scalar>> m_, v_;
  long t_ = 0;
};

/// Plain gradient descent: w -= lr * g.
template <typename Scalar>
class Sgd {
 public:
  Sgd(std::vector<Parameter<Scalar>*> params, double learning_rate)
      : params_(std::move(params)), learning_rate_(learning_rate) {
    if (!(learning_rate_ >= 0.0) || !std::isfinite(learning_rate_)) {
      throw std::invalid_argument(fmt::format("sgd: invalid learning rate {}", learning_rate_));
    }
  }

  void step() {
    for (auto* p : params_) {
      if (detail::has_grad(*p)) detail::check_finite_grad(*p);
    }
    for (auto* p : params_) {
      if (detail::has_grad(*p)) p->value.data() -= static_cast<Scalar>(learning_rate_) * p->grad.data();
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

 private:
  std::vector<Parameter<Scalar>*> params_;
  double learning_rate_;
};

}  // namespace iotids::nn
