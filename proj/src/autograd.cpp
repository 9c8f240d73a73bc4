#include "spnet/autograd.hpp"

#include <unordered_map>
#include <unordered_set>

namespace spnet {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

Var leaf(Tensor value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  if (requires_grad) n->grad = Tensor::zeros_like(n->value);
  return n;
}

Var constant(Tensor value) { return leaf(std::move(value), false); }

Var make_op(Tensor value, std::vector<Var> parents, BackwardFn rule) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  bool track = g_grad_enabled;
  if (track) {
    track = false;
    for (const auto& p : parents) {
      if (p && p->requires_grad) {
        track = true;
        break;
      }
    }
  }
  if (track) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward_rule = std::move(rule);
  }
  return n;
}

void backward(const Var& loss) {
  if (!loss) throw ConfigError("backward: null loss node");
  if (loss->value.numel() != 1) {
    throw ConfigError("backward: loss must be scalar, got shape " + shape_str(loss->value.shape));
  }
  if (!loss->requires_grad) return;

  // Iterative postorder DFS over parents; deterministic order.
  std::vector<Node*> topo;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.get(), 0);
  visited.insert(loss.get());
  while (!stack.empty()) {
    auto& [node, next_child] = stack.back();
    if (next_child < node->parents.size()) {
      Node* p = node->parents[next_child].get();
      ++next_child;
      if (p && p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      topo.push_back(node);
      stack.pop_back();
    }
  }

  // Per-call gradient buffers; merged into node grads at the end so repeated
  // backward calls accumulate exactly.
  std::unordered_map<Node*, Tensor> pending;
  pending[loss.get()] = Tensor(loss->value.shape, 1.0f);

  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    Node* n = *it;
    auto found = pending.find(n);
    if (found == pending.end()) continue;
    if (!n->backward_rule) continue;
    std::vector<Tensor*> parent_grads(n->parents.size(), nullptr);
    for (std::size_t i = 0; i < n->parents.size(); ++i) {
      Node* p = n->parents[i].get();
      if (!p || !p->requires_grad) continue;
      auto [slot, inserted] = pending.try_emplace(p, p->value.shape);
      parent_grads[i] = &slot->second;
    }
    n->backward_rule(found->second, parent_grads);
  }

  for (Node* n : topo) {
    auto found = pending.find(n);
    if (found == pending.end()) continue;
    Tensor& g = n->grad_ref();
    const Tensor& d = found->second;
    for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] += d.data[i];
  }
}

void zero_grad(const std::vector<Var>& params) {
  for (const auto& p : params) {
    if (!p) continue;
    Tensor& g = p->grad_ref();
    std::fill(g.data.begin(), g.data.end(), 0.0f);
  }
}

}  // namespace spnet
