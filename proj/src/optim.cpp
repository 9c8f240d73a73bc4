#include "spnet/optim.hpp"

namespace spnet {

Sgd::Sgd(std::vector<Var> params, float momentum, float weight_decay)
    : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
  velocity_.reserve(params_.size());
  for (const auto& p : params_) {
    if (!p || !p->requires_grad) throw ConfigError("Sgd: every parameter must require grad");
    velocity_.push_back(Tensor::zeros_like(p->value));
  }
}

void Sgd::step(float lr) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Var& p = params_[i];
    Tensor& v = velocity_[i];
    const Tensor& g = p->grad_ref();
    for (std::size_t j = 0; j < v.data.size(); ++j) {
      v.data[j] = momentum_ * v.data[j] + g.data[j] + weight_decay_ * p->value.data[j];
      p->value.data[j] -= lr * v.data[j];
    }
  }
}

void Sgd::zero_grad() { spnet::zero_grad(params_); }

}  // namespace spnet
