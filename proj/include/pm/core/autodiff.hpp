#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <utility>
#include <vector>

#include "pm/core/tensor.hpp"

namespace pm::ad {

bool grad_enabled();
void set_grad_enabled(bool on);

// Disables tape recording for its scope.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(grad_enabled()) { set_grad_enabled(false); }
  ~NoGradGuard() { set_grad_enabled(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Tape node. The backward closure receives this node's (value, grad) and
// accumulates into the parents it captured; it never captures its own node,
// so the graph stays an acyclic chain of child -> parent references.
template <typename T>
class Node {
 public:
  using BackwardFn = std::function<void(const Tensor<T>&, const Tensor<T>&)>;

  explicit Node(Tensor<T> v) : value(std::move(v)) {}

  bool has_grad() const { return grad.size() > 0; }

  T* grad_ptr() {
    if (!has_grad()) grad = Tensor<T>::zeros(value.shape());
    return grad.data();
  }

  void accum(const T* g, long n) {
    T* dst = grad_ptr();
    for (long i = 0; i < n; ++i) dst[i] += g[i];
  }

  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  static Var leaf(Tensor<T> v, bool requires_grad = false) {
    auto n = std::make_shared<Node<T>>(std::move(v));
    n->requires_grad = requires_grad && grad_enabled();
    return Var(std::move(n));
  }

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  long size() const { return node_ ? node_->value.size() : 0; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const Tensor<T>& grad() const { return node_->grad; }
  bool has_grad() const { return node_ && node_->has_grad(); }
  void zero_grad() {
    if (node_) node_->grad = Tensor<T>();
  }

  Var detach() const {
    return leaf(Tensor<T>(node_->value.shape(), std::vector<T>(node_->value.data(),
                                                               node_->value.data() +
                                                                   node_->value.size())),
                false);
  }

  T item() const {
    if (size() != 1) throw std::runtime_error("item() needs a one-element tensor");
    return node_->value[0];
  }

  // Reverse sweep from a scalar root. Interior gradients are released as soon
  // as they have been propagated; leaf gradients accumulate across calls.
  void backward() const {
    if (!node_) throw std::runtime_error("backward() on undefined var");
    if (node_->value.size() != 1) throw std::runtime_error("backward() root must be scalar");
    node_->grad_ptr()[0] += T(1);

    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    struct Frame {
      Node<T>* n;
      size_t i;
    };
    std::vector<Frame> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
      Frame& f = stack.back();
      if (f.i < f.n->parents.size()) {
        Node<T>* p = f.n->parents[f.i++].get();
        if (seen.insert(p).second) stack.push_back({p, 0});
      } else {
        order.push_back(f.n);
        stack.pop_back();
      }
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node<T>* n = *it;
      if (!n->backward) continue;
      if (!n->has_grad()) continue;
      n->backward(n->value, n->grad);
      n->grad = Tensor<T>();
    }
  }

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

template <typename T>
Var<T> constant(Tensor<T> v) {
  return Var<T>::leaf(std::move(v), false);
}

template <typename T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> inputs,
               typename Node<T>::BackwardFn fn) {
  auto n = std::make_shared<Node<T>>(std::move(value));
  bool need = false;
  for (const auto& in : inputs) need = need || in.requires_grad();
  if (grad_enabled() && need) {
    n->requires_grad = true;
    n->parents.reserve(inputs.size());
    for (auto& in : inputs) n->parents.push_back(in.node());
    n->backward = std::move(fn);
  }
  return Var<T>(std::move(n));
}

using VarF = Var<float>;
using VarD = Var<double>;

}  // namespace pm::ad
