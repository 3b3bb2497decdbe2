#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "maa/tensor.hpp"

namespace maa::ad {

// Reverse-mode tape node. The backward closure reads `self.grad` and
// accumulates into the gradients of `self.parents`.
template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Tensor<T>& grad_ref() {
    if (grad.size() != value.size() || grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
    return grad;
  }
  bool has_grad() const { return grad.size() == value.size() && !grad.empty(); }
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  static Var constant(Tensor<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    return Var(std::move(n));
  }

  static Var leaf(Tensor<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = true;
    return Var(std::move(n));
  }

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const std::vector<int>& shape() const { return node_->value.shape(); }
  int dim(int i) const { return node_->value.dim(i); }
  bool requires_grad() const { return node_->requires_grad; }

  // Zero tensor when nothing has flowed back yet.
  Tensor<T> grad() const { return node_->has_grad() ? node_->grad : Tensor<T>(node_->value.shape()); }
  bool has_grad() const { return node_->has_grad(); }
  void zero_grad() {
    if (node_->has_grad()) node_->grad.fill(T(0));
  }

  T item() const {
    if (node_->value.size() != 1) throw InputError("item() on non-scalar tensor");
    return node_->value[0];
  }

  Var detach() const { return constant(node_->value); }

  Node<T>* raw() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Builds an op node. Parents that do not require grad are dropped from the
// tape so constant subgraphs are freed eagerly.
template <typename T>
Var<T> make_op(Tensor<T> value, const std::vector<Var<T>>& parents, std::function<void(Node<T>&)> backward) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  bool any = false;
  for (const auto& p : parents) any = any || p.requires_grad();
  if (any) {
    n->requires_grad = true;
    n->parents.reserve(parents.size());
    for (const auto& p : parents) n->parents.push_back(p.node());
    n->backward = std::move(backward);
  }
  return Var<T>(std::move(n));
}

// Accumulates d(root)/d(leaf) into every reachable leaf. `root` must be a scalar
// unless `seed` is given.
template <typename T>
void backward(const Var<T>& root, const Tensor<T>* seed = nullptr) {
  if (!root.requires_grad()) return;
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.raw(), 0);
  visited.insert(root.raw());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  Tensor<T>& g = root.raw()->grad_ref();
  if (seed) {
    require_shape(seed->shape(), g.shape(), "backward seed");
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += (*seed)[i];
  } else {
    if (g.size() != 1) throw InputError("backward() without seed requires a scalar root");
    g[0] += T(1);
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward && n->has_grad()) n->backward(*n);
  }
  // Interior grads are scratch; only leaves keep theirs.
  for (Node<T>* n : order) {
    if (n->backward) n->grad = Tensor<T>();
  }
}

template <typename T>
inline Tensor<T>* grad_of(Node<T>& self, std::size_t parent) {
  Node<T>* p = self.parents[parent].get();
  return p->requires_grad ? &p->grad_ref() : nullptr;
}

}  // namespace maa::ad
