#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <stdexcept>
#include <vector>

#include "iotids/nn/tensor.hpp"

namespace iotids::nn {

/// Handle to a value recorded on a Tape.
struct Var {
  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::size_t id = kNone;

  bool valid() const { return id != kNone; }
  static Var none() { return {}; }
};

/// Reverse-mode differentiation tape. Every op appends one node holding its
/// output value and a closure that pushes the output gradient to the inputs.
/// Nodes are appended in topological order, so backward() walks them in
/// reverse.
template <typename Scalar>
class Tape {
 public:
  using TensorT = Tensor<Scalar>;
  using BackwardFn = std::function<void(Tape&, const TensorT& grad_out)>;

  /// With record_gradients = false nothing requires a gradient, so ops keep
  /// no backward state (inference).
  explicit Tape(bool record_gradients = true) : record_gradients_(record_gradients) {}

  Var constant(TensorT value) {
    nodes_.push_back(Node{std::move(value), {}, nullptr, nullptr, false});
    return {nodes_.size() - 1};
  }

  /// Leaf bound to a model parameter; gradients accumulate into param.grad.
  Var parameter(Parameter<Scalar>& param) {
    const bool track = record_gradients_ && param.trainable;
    nodes_.push_back(Node{param.value, {}, nullptr, track ? &param : nullptr, track});
    return {nodes_.size() - 1};
  }

  Var record(TensorT value, std::initializer_list<Var> inputs, BackwardFn backward) {
    bool needs = false;
    for (Var v : inputs) needs = needs || (v.valid() && requires_grad(v));
    nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : nullptr, nullptr, needs});
    return {nodes_.size() - 1};
  }

  Var record(TensorT value, const std::vector<Var>& inputs, BackwardFn backward) {
    bool needs = false;
    for (Var v : inputs) needs = needs || (v.valid() && requires_grad(v));
    nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : nullptr, nullptr, needs});
    return {nodes_.size() - 1};
  }

  const TensorT& value(Var v) const { return node(v).value; }
  bool requires_grad(Var v) const { return node(v).requires_grad; }

  /// Gradient buffer of a node, zero-initialised on first use.
  TensorT& grad(Var v) {
    Node& n = node(v);
    if (n.grad.shape() != n.value.shape()) n.grad = TensorT::zeros_like(n.value);
    return n.grad;
  }

  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(loss)/d(loss) = 1 and propagates to every trainable parameter
  /// reachable from `loss`. Gradients add onto the parameters' grad buffers.
  void backward(Var loss) {
    if (!loss.valid() || loss.id >= nodes_.size()) {
      throw std::logic_error("backward() called before a forward pass recorded the loss");
    }
    if (value(loss).size() != 1) {
      throw std::logic_error(fmt::format("backward() needs a scalar loss, got shape {}",
                                         shape_string(value(loss).shape())));
    }
    grad(loss).data().setConstant(Scalar(1));
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.param != nullptr) {
        if (n.param->grad.shape() != n.param->value.shape()) n.param->zero_grad();
        n.param->grad.data() += n.grad.data();
      } else if (n.backward) {
        // The closure may append to other nodes' grads but never to this one.
        TensorT g = std::move(n.grad);
        n.backward(*this, g);
      }
      n.grad = TensorT();
    }
  }

 private:
  struct Node {
    TensorT value;
    TensorT grad;
    BackwardFn backward;
    Parameter<Scalar>* param;
    bool requires_grad;
  };

  Node& node(Var v) {
    if (!v.valid() || v.id >= nodes_.size()) throw std::logic_error("invalid tape variable");
    return nodes_[v.id];
  }
  const Node& node(Var v) const {
    if (!v.valid() || v.id >= nodes_.size()) throw std::logic_error("invalid tape variable");
    return nodes_[v.id];
  }

  std::vector<Node> nodes_;
  bool record_gradients_ = true;
};

}  // namespace iotids::nn
