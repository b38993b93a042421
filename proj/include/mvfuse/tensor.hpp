#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mvfuse/common.hpp"

namespace mvf {

/// Reverse-mode autograd node. Values are stored row-major; the first axis is
/// the channel axis for every feature map in this code base.
template <class Real>
struct TensorNode {
  std::vector<int> shape;
  std::vector<Real> value;
  std::vector<Real> grad;  // sized on demand, same extent as value
  bool requires_grad = false;
  bool backward_done = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void()> backward_fn;

  std::size_t numel() const { return value.size(); }

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), Real(0));
  }
};

namespace detail {
inline thread_local int no_grad_depth = 0;
}

inline bool grad_enabled() { return detail::no_grad_depth == 0; }

/// RAII guard disabling tape construction (forward-only evaluation).
struct NoGrad {
  NoGrad() { ++detail::no_grad_depth; }
  ~NoGrad() { --detail::no_grad_depth; }
  NoGrad(const NoGrad&) = delete;
  NoGrad& operator=(const NoGrad&) = delete;
};

inline std::size_t shape_numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    MVF_CHECK_ARG(d >= 0, "negative tensor extent");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

/// Value-semantics handle to a TensorNode.
template <class Real>
class TensorT {
 public:
  using Node = TensorNode<Real>;

  TensorT() = default;
  explicit TensorT(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static TensorT zeros(std::vector<int> shape) {
    auto node = std::make_shared<Node>();
    const std::size_t n = shape_numel(shape);
    node->shape = std::move(shape);
    node->value.assign(n, Real(0));
    return TensorT(node);
  }

  static TensorT full(std::vector<int> shape, Real v) {
    TensorT t = zeros(std::move(shape));
    std::fill(t.values().begin(), t.values().end(), v);
    return t;
  }

  static TensorT scalar(Real v) { return full({1}, v); }

  static TensorT from_data(std::vector<int> shape, std::vector<Real> data) {
    MVF_CHECK_ARG(shape_numel(shape) == data.size(), "tensor data does not match shape");
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    return TensorT(node);
  }

  /// Trainable leaf: participates in backward and keeps an accumulating grad.
  static TensorT param(std::vector<int> shape, std::vector<Real> data) {
    TensorT t = from_data(std::move(shape), std::move(data));
    t.node_->requires_grad = true;
    t.node_->ensure_grad();
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

  const std::vector<int>& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape.at(static_cast<std::size_t>(i)); }
  std::size_t numel() const { return node_->numel(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::vector<Real>& values() { return node_->value; }
  const std::vector<Real>& values() const { return node_->value; }
  std::vector<Real>& grads() { return node_->grad; }
  const std::vector<Real>& grads() const { return node_->grad; }

  Real item() const {
    MVF_CHECK_ARG(numel() == 1, "item() requires a single-element tensor");
    return node_->value[0];
  }

  void zero_grad() {
    node_->grad.assign(node_->value.size(), Real(0));
    node_->backward_done = false;
  }

  /// Detached copy sharing nothing with the tape.
  TensorT detach_copy() const { return from_data(node_->shape, node_->value); }

 private:
  std::shared_ptr<Node> node_;
};

/// Build the output node of an op. `backward_builder` is only invoked when the
/// tape is live and some parent requires grad.
template <class Real, class BackwardBuilder>
TensorT<Real> make_op_output(std::vector<int> shape, std::vector<Real> value,
                             std::vector<std::shared_ptr<TensorNode<Real>>> parents,
                             BackwardBuilder&& backward_builder) {
  MVF_CHECK_ARG(shape_numel(shape) == value.size(), "op output does not match shape");
  auto node = std::make_shared<TensorNode<Real>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (grad_enabled()) {
    bool needs = false;
    for (const auto& p : parents)
      if (p->requires_grad) needs = true;
    if (needs) {
      node->requires_grad = true;
      node->parents = std::move(parents);
      node->backward_fn = backward_builder(node.get());
    }
  }
  return TensorT<Real>(node);
}

/// Reverse-mode sweep from a scalar loss. Populates grads of every reachable
/// tensor with requires_grad; frees the tape as it goes.
template <class Real>
void backward(const TensorT<Real>& loss) {
  MVF_CHECK_ARG(loss.defined() && loss.numel() == 1, "backward requires a scalar loss");
  auto* root = loss.node();
  MVF_CHECK_ARG(!root->backward_done, "backward called twice on the same loss without reset");
  root->backward_done = true;
  if (!root->requires_grad) return;

  // Iterative post-order DFS over parents; the reversed order visits every
  // node after all of its consumers. `order` holds owning pointers so that
  // releasing tape edges mid-sweep cannot free a node that is still queued.
  std::vector<std::shared_ptr<TensorNode<Real>>> order;
  std::unordered_set<TensorNode<Real>*> visited;
  std::vector<std::pair<std::shared_ptr<TensorNode<Real>>, std::size_t>> stack;
  stack.emplace_back(loss.node_ptr(), 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      const auto& p = node->parents[next++];
      if (p->requires_grad && visited.insert(p.get()).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] = Real(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode<Real>* node = it->get();
    if (node->backward_fn) {
      for (auto& p : node->parents)
        if (p->requires_grad) p->ensure_grad();
      node->backward_fn();
      node->backward_fn = nullptr;
      node->parents.clear();
    }
  }
}

using Tensor = TensorT<double>;
using Tensor32 = TensorT<float>;

}  // namespace mvf
