#pragma once

#include "spnet/autograd.hpp"

namespace spnet {

/// Momentum SGD. Per step:
///   v     <- momentum * v + grad + weight_decay * param
///   param <- param - lr * v
class Sgd {
 public:
  Sgd(std::vector<Var> params, float momentum, float weight_decay);

  void step(float lr);
  void zero_grad();

  const std::vector<Var>& params() const { return params_; }

 private:
  std::vector<Var> params_;
  std::vector<Tensor> velocity_;
  float momentum_;
  float weight_decay_;
};

}  // namespace spnet
