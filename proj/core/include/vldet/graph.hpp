#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "vldet/tensor.hpp"

namespace vldet {

// One node of the reverse-mode tape. Nodes are created by the ops in
// ops.hpp; parents point upstream, so releasing the root of a forward pass
// releases every intermediate while leaf parameters stay alive.
class Node {
 public:
  Tensor value;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents' grads.
  std::function<void(Node&)> backward_fn;

  Tensor& ensure_grad() {
    if (grad_.size() != value.size()) grad_ = Tensor::zeros(value.shape());
    return grad_;
  }
  bool has_grad() const { return grad_.size() == value.size(); }
  Tensor& grad() { return grad_; }
  const Tensor& grad() const { return grad_; }
  void zero_grad() {
    if (has_grad()) grad_.fill(0.0);
  }

 private:
  Tensor grad_;
};

using Var = std::shared_ptr<Node>;

// Leaf holding a value; gradients accumulate when requires_grad is set.
Var make_leaf(Tensor value, bool requires_grad);
// Leaf that the sweep never differentiates (inputs, labels, masks).
Var make_constant(Tensor value);

// Reverse sweep from a scalar root (size-1 tensor). Seeds d(root)/d(root)=1
// and accumulates into every reachable leaf with requires_grad. Topological
// order follows parent insertion order, so repeated runs accumulate in the
// same sequence.
void backward(const Var& root);

}  // namespace vldet
