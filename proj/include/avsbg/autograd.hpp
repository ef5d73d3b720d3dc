#pragma once

// Reverse-mode automatic differentiation over Tensor values.
//
// Every op returns a Var that owns its value and, when any input requires a
// gradient, a closure that pushes the output gradient back to its inputs.
// Graphs are rebuilt each forward pass; parameters are long-lived leaf Vars.

#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "avsbg/tensor.hpp"

namespace avsbg {

namespace detail {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  Tensor& grad_buffer() {
    if (grad.shape() != value.shape() || grad.size() != value.size()) grad = Tensor::zeros_like(value);
    return grad;
  }
  bool has_grad() const { return grad.size() == value.size() && grad.shape() == value.shape(); }
};

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// Disables graph construction in its scope (inference).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

class Var {
 public:
  Var() = default;

  static Var constant(Tensor t) {
    Var v;
    v.node_ = std::make_shared<detail::Node>();
    v.node_->value = std::move(t);
    return v;
  }
  static Var parameter(Tensor t) {
    Var v = constant(std::move(t));
    v.node_->requires_grad = true;
    return v;
  }

  bool defined() const noexcept { return node_ != nullptr; }
  explicit operator bool() const noexcept { return defined(); }

  const Tensor& value() const { return node_->value; }
  /// Direct write access; only meaningful for leaves (optimizer updates, gradient probes).
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  int dim(int i) const { return node_->value.dim(i); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  /// Accumulated gradient; zeros if backward never reached this node.
  Tensor grad() const { return node_->has_grad() ? node_->grad : Tensor::zeros_like(node_->value); }
  void zero_grad() {
    if (node_->has_grad()) node_->grad.fill(0.0);
  }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  detail::Node* node() const noexcept { return node_.get(); }
  const std::shared_ptr<detail::Node>& shared() const noexcept { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Builds an op result. `fn(self)` runs during backward with `self.grad`
/// populated; it must accumulate into `self.inputs[i]->grad_buffer()` for each
/// input that requires a gradient.
template <class Fn>
Var make_op(Tensor value, std::vector<Var> inputs, Fn&& fn) {
  Var out = Var::constant(std::move(value));
  if (!detail::grad_mode_flag()) return out;
  bool any = false;
  for (const Var& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  detail::Node* n = out.node();
  n->requires_grad = true;
  n->inputs.reserve(inputs.size());
  for (Var& in : inputs) n->inputs.push_back(in.shared());
  n->backward = std::forward<Fn>(fn);
  return out;
}

/// Input i of an op node needs a gradient.
inline bool needs_grad(const detail::Node& self, std::size_t i) {
  return i < self.inputs.size() && self.inputs[i] && self.inputs[i]->requires_grad;
}

/// Backpropagates from a scalar root. Interior gradients are released
/// afterwards; leaf gradients accumulate across calls until zero_grad().
inline void backward(const Var& root) {
  if (!root.requires_grad()) return;
  if (root.size() != 1) throw ArgumentError("backward() requires a scalar root, got " + shape_str(root.shape()));

  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{root.node(), 0}};
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child && child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward && n->has_grad()) n->backward(*n);
  }
  for (detail::Node* n : order)
    if (!n->inputs.empty()) n->grad = Tensor();
}

}  // namespace avsbg
