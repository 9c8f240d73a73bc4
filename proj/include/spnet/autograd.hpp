#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "spnet/tensor.hpp"

namespace spnet {

struct Node;
using Var = std::shared_ptr<Node>;

/// Backward rule: given the gradient flowing into this node, add each parent's
/// contribution into the matching slot of `parent_grads`. Slots are null for
/// parents that do not require grad.
using BackwardFn =
    std::function<void(const Tensor& upstream, const std::vector<Tensor*>& parent_grads)>;

/// Differentiable computation-graph vertex. Values are immutable once the node
/// is built; grad accumulates across backward() calls until zero_grad().
struct Node {
  Tensor value;
  Tensor grad;  // same shape as value; allocated lazily for interior nodes
  bool requires_grad = false;
  std::vector<Var> parents;
  BackwardFn backward_rule;

  Tensor& grad_ref() {
    if (grad.data.empty()) grad = Tensor::zeros_like(value);
    return grad;
  }
};

/// Leaf with trainable storage (grad allocated eagerly).
Var leaf(Tensor value, bool requires_grad = true);

/// Value-only node; never tracks gradients.
Var constant(Tensor value);

/// Interior op node. Parents and the rule are dropped when no parent requires
/// grad or grad recording is disabled, leaving a plain value node.
Var make_op(Tensor value, std::vector<Var> parents, BackwardFn rule);

bool grad_enabled();

/// RAII switch disabling graph recording (inference-mode forward).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

/// Reverse-mode sweep from a scalar loss. Every reachable node with
/// requires_grad receives its contribution; calling twice without zero_grad
/// accumulates (doubles) the gradients.
void backward(const Var& loss);

void zero_grad(const std::vector<Var>& params);

}  // namespace spnet
