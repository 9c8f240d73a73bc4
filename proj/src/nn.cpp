#include "spnet/nn.hpp"

#include <cmath>

namespace spnet {

std::int64_t param_count(const ParamMap& params) {
  std::int64_t total = 0;
  for (const auto& [name, v] : params.trainable) total += v->value.numel();
  return total;
}

void kaiming_uniform(Tensor& w, int fan_in, Rng& rng) {
  const float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
  for (float& v : w.data) v = rng.uniform(-bound, bound);
}

Conv2d::Conv2d(int cin, int cout, int k, int stride, int padding, int dilation, bool with_bias,
               Rng& rng)
    : stride_(stride), padding_(padding), dilation_(dilation) {
  Tensor w({cout, cin, k, k});
  kaiming_uniform(w, cin * k * k, rng);
  weight = leaf(std::move(w));
  if (with_bias) bias = leaf(Tensor({cout}));
}

Var Conv2d::forward(const Var& x) const {
  return conv2d(x, weight, bias, stride_, padding_, dilation_);
}

void Conv2d::collect(const std::string& prefix, ParamMap& out) const {
  out.add(prefix + ".weight", weight);
  if (bias) out.add(prefix + ".bias", bias);
}

Conv1dAlong::Conv1dAlong(int channels, int k, bool with_bias, Rng& rng) : padding_((k - 1) / 2) {
  Tensor w({channels, channels, k});
  kaiming_uniform(w, channels * k, rng);
  weight = leaf(std::move(w));
  if (with_bias) bias = leaf(Tensor({channels}));
}

Var Conv1dAlong::forward(const Var& x) const { return conv1d_along(x, weight, bias, padding_); }

void Conv1dAlong::collect(const std::string& prefix, ParamMap& out) const {
  out.add(prefix + ".weight", weight);
  if (bias) out.add(prefix + ".bias", bias);
}

BatchNorm2d::BatchNorm2d(int channels)
    : gamma(leaf(Tensor({channels}, 1.0f))),
      beta(leaf(Tensor({channels}))),
      stats{Tensor({channels}, 0.0f), Tensor({channels}, 1.0f)} {}

Var BatchNorm2d::forward(const Var& x, Mode mode) {
  return batchnorm2d(x, gamma, beta, stats, mode);
}

void BatchNorm2d::collect(const std::string& prefix, ParamMap& out) {
  out.add(prefix + ".gamma", gamma);
  out.add(prefix + ".beta", beta);
  out.add_buffer(prefix + ".running_mean", &stats.mean);
  out.add_buffer(prefix + ".running_var", &stats.var);
}

ConvBnRelu::ConvBnRelu(int cin, int cout, int k, int stride, int padding, int dilation, Rng& rng)
    : conv(cin, cout, k, stride, padding, dilation, /*with_bias=*/false, rng), bn(cout) {}

Var ConvBnRelu::forward(const Var& x, Mode mode) { return relu(bn.forward(conv.forward(x), mode)); }

void ConvBnRelu::collect(const std::string& prefix, ParamMap& out) {
  conv.collect(prefix + ".conv", out);
  bn.collect(prefix + ".bn", out);
}

}  // namespace spnet
