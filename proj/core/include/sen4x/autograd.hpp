#pragma once

// Minimal tape-free reverse-mode autodiff. Every differentiable op returns a
// Var whose node keeps its inputs alive and a closure that pushes the node's
// gradient into them. Graphs are freed when the last Var referencing them
// goes out of scope; parameters are long-lived leaf Vars.

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "sen4x/tensor.hpp"

namespace sen4x {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until first accumulation
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;
  bool requires_grad = false;

  Tensor<T>& ensure_grad() {
    if (grad.empty() && !value.empty()) grad = Tensor<T>(value.shape);
    return grad;
  }
};

namespace detail {
inline thread_local bool grad_enabled = true;
}

inline bool grad_enabled() { return detail::grad_enabled; }

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_enabled) { detail::grad_enabled = false; }
  ~NoGradGuard() { detail::grad_enabled = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Tensor<T>& grad() const { return node_->grad; }
  Tensor<T>& mutable_grad() { return node_->ensure_grad(); }
  const Shape& shape() const { return node_->value.shape; }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.data.begin(), node_->grad.data.end(), T{0});
  }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Builds an op result. The closure receives the result node; it reads
/// `self.grad` and accumulates into `self.inputs[i]->ensure_grad()` for inputs
/// that require gradients.
template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> inputs, std::function<void(Node<T>&)> backward_fn) {
  Var<T> out(std::move(value));
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  Node<T>* n = out.node();
  n->requires_grad = true;
  n->inputs.reserve(inputs.size());
  for (auto& in : inputs) n->inputs.push_back(in.node_ptr());
  n->backward_fn = std::move(backward_fn);
  return out;
}

/// Runs reverse accumulation from `root`, seeding d(root) with `seed`
/// (all ones when empty). Leaf gradients accumulate across calls.
template <typename T>
void backward(const Var<T>& root, const Tensor<T>& seed = {}) {
  if (!root.requires_grad()) return;
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node(), 0}};
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.push_back({child, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  Tensor<T>& g = root.node()->ensure_grad();
  if (seed.empty()) {
    for (auto& v : g.data) v += T{1};
  } else {
    for (std::size_t i = 0; i < g.numel(); ++i) g.data[i] += seed.data[i];
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
  // interior gradients are not needed once propagated
  for (Node<T>* n : order)
    if (n->backward_fn) n->grad = Tensor<T>();
}

}  // namespace sen4x
