#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "tcslot/tensor.hpp"

namespace tcslot {

// Reverse-mode autodiff over Tensor values. Each op result owns a node that
// keeps its inputs alive and a closure pushing its gradient back into them.
// Results whose inputs are all constant drop the graph entirely.

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  Tensor<T>& ensure_grad() {
    if (grad.size() != value.size()) grad = Tensor<T>(value.shape(), T(0));
    return grad;
  }
  bool has_grad() const { return grad.size() == value.size() && !value.empty(); }
};

template <typename T>
class Var {
 public:
  using NodePtr = std::shared_ptr<Node<T>>;

  Var() = default;
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  static Var constant(Tensor<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    return Var(std::move(n));
  }

  static Var parameter(Tensor<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = true;
    return Var(std::move(n));
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  int dim(int i) const { return node_->value.dim(i); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  /// Gradient accumulated by the last backward pass; zeros if none reached this node.
  Tensor<T> grad() const {
    if (node_->has_grad()) return node_->grad;
    return Tensor<T>(node_->value.shape(), T(0));
  }
  void zero_grad() {
    if (node_->has_grad()) node_->grad.fill(T(0));
  }

  T item() const { return node_->value[0]; }
  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

/// Builds an op result. `backward` receives the result node; its grad is allocated.
template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> inputs,
                   std::function<void(Node<T>&)> backward) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  for (const auto& in : inputs) n->requires_grad = n->requires_grad || in.requires_grad();
  if (n->requires_grad) {
    n->inputs.reserve(inputs.size());
    for (auto& in : inputs) n->inputs.push_back(in.node());
    n->backward_fn = std::move(backward);
  }
  return Var<T>(std::move(n));
}

/// Severs a value from the graph.
template <typename T>
Var<T> detach(const Var<T>& v) {
  return Var<T>::constant(v.value());
}

/// Runs reverse accumulation from a single-element root.
template <typename T>
void backward(const Var<T>& root) {
  if (root.size() != 1) throw ShapeError("backward: root must hold a single element");
  if (!root.requires_grad()) return;

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (!node->backward_fn || !node->has_grad()) continue;
    for (auto& in : node->inputs) {
      if (in->requires_grad) in->ensure_grad();
    }
    node->backward_fn(*node);
  }
}

}  // namespace tcslot
