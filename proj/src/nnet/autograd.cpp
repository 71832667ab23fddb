#include "exdiff/nnet/autograd.hpp"

#include <unordered_set>

#include "exdiff/error.hpp"

namespace exdiff::nnet {

namespace {
thread_local bool t_grad_enabled = true;
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

template <typename Real>
Var<Real> constant(Tensor<Real> t) {
  auto n = std::make_shared<Node<Real>>();
  n->value = std::move(t);
  return Var<Real>(std::move(n));
}

template <typename Real>
Var<Real> leaf(Parameter<Real>& p) {
  auto n = std::make_shared<Node<Real>>();
  n->value = p.value;
  n->param = &p;
  n->requires_grad = t_grad_enabled;
  return Var<Real>(std::move(n));
}

template <typename Real>
Var<Real> make_result(Tensor<Real> value, std::vector<Var<Real>> inputs,
                      std::function<void(Node<Real>&)> backward) {
  auto n = std::make_shared<Node<Real>>();
  n->value = std::move(value);
  if (t_grad_enabled) {
    for (const auto& in : inputs) n->requires_grad = n->requires_grad || in.requires_grad();
  }
  if (n->requires_grad) {
    n->inputs.reserve(inputs.size());
    for (auto& in : inputs) n->inputs.push_back(in.ptr());
    n->backward = std::move(backward);
  }
  return Var<Real>(std::move(n));
}

template <typename Real>
void backward(const Var<Real>& loss) {
  if (!loss.defined()) throw InvalidArgument("backward: undefined loss");
  if (loss.value().numel() != 1) {
    throw InvalidArgument("backward: loss must be a scalar, got shape " + shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) throw Error("backward: loss has no recorded graph");

  // Iterative post-order DFS gives a topological order (inputs before users).
  std::vector<Node<Real>*> order;
  std::unordered_set<Node<Real>*> seen;
  std::vector<std::pair<Node<Real>*, std::size_t>> stack{{loss.node(), 0}};
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<Real>* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->grad_buffer()[0] = Real(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<Real>* n = *it;
    if (n->grad.numel() == 0) continue;
    if (n->backward) n->backward(*n);
    if (n->param) {
      auto& pg = n->param->grad;
      if (pg.numel() != n->grad.numel()) pg = Tensor<Real>(n->param->value.shape());
      for (std::size_t i = 0; i < pg.numel(); ++i) pg[i] += n->grad[i];
    }
  }
}

#define EXDIFF_INSTANTIATE(R)                                                              \
  template Var<R> constant<R>(Tensor<R>);                                                  \
  template Var<R> leaf<R>(Parameter<R>&);                                                  \
  template Var<R> make_result<R>(Tensor<R>, std::vector<Var<R>>, std::function<void(Node<R>&)>); \
  template void backward<R>(const Var<R>&);

EXDIFF_INSTANTIATE(float)
EXDIFF_INSTANTIATE(double)
#undef EXDIFF_INSTANTIATE

}  // namespace exdiff::nnet
