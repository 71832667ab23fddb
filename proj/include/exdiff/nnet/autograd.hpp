#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "exdiff/nnet/tensor.hpp"

namespace exdiff::nnet {

/// Trainable tensor with its accumulated gradient.
template <typename Real>
struct Parameter {
  std::string name;
  Tensor<Real> value;
  Tensor<Real> grad;

  void zero_grad() { grad = Tensor<Real>(value.shape()); }
};

/// One recorded operation. `backward` reads `grad` and accumulates into the
/// gradients of `inputs`.
template <typename Real>
struct Node {
  Tensor<Real> value;
  Tensor<Real> grad;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;
  Parameter<Real>* param = nullptr;
  bool requires_grad = false;

  Tensor<Real>& grad_buffer() {
    if (grad.numel() != value.numel()) grad = Tensor<Real>(value.shape());
    return grad;
  }
};

/// Handle to a node of the recorded computation.
template <typename Real>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<Real>> n) : node_(std::move(n)) {}

  const Tensor<Real>& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t dim(std::size_t i) const { return node_->value.dim(i); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool defined() const { return static_cast<bool>(node_); }
  const std::shared_ptr<Node<Real>>& ptr() const { return node_; }
  Node<Real>* node() const { return node_.get(); }

 private:
  std::shared_ptr<Node<Real>> node_;
};

/// Whether new operations record backward closures (thread-local).
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename Real>
Var<Real> constant(Tensor<Real> t);

/// Leaf bound to a parameter; backward() adds into parameter.grad.
template <typename Real>
Var<Real> leaf(Parameter<Real>& p);

/// Builds an op result. The closure is kept only if gradients are enabled and
/// some input requires them.
template <typename Real>
Var<Real> make_result(Tensor<Real> value, std::vector<Var<Real>> inputs,
                      std::function<void(Node<Real>&)> backward);

/// Reverse-mode sweep from a scalar loss. Throws InvalidArgument for a
/// non-scalar loss and Error when the loss carries no recorded graph.
template <typename Real>
void backward(const Var<Real>& loss);

}  // namespace exdiff::nnet
