#pragma once

#include <string>
#include <utility>
#include <vector>

#include "spnet/ops.hpp"
#include "spnet/rng.hpp"

namespace spnet {

/// Named view of a module's state: trainable tensors plus persistent buffers
/// (batchnorm running statistics). Names use a dotted block.branch.layer
/// scheme, e.g. "head.mpm0.srd.fuse.conv.weight".
struct ParamMap {
  std::vector<std::pair<std::string, Var>> trainable;
  std::vector<std::pair<std::string, Tensor*>> buffers;

  void add(const std::string& name, const Var& v) { trainable.emplace_back(name, v); }
  void add_buffer(const std::string& name, Tensor* t) { buffers.emplace_back(name, t); }
};

/// Sum of trainable scalar counts.
std::int64_t param_count(const ParamMap& params);

/// Kaiming-uniform fill: U(-b, b) with b = sqrt(6 / fan_in).
void kaiming_uniform(Tensor& w, int fan_in, Rng& rng);

/// 2-D convolution layer. Layers followed by batchnorm are built without bias.
class Conv2d {
 public:
  Conv2d(int cin, int cout, int k, int stride, int padding, int dilation, bool with_bias,
         Rng& rng);

  Var forward(const Var& x) const;
  void collect(const std::string& prefix, ParamMap& out) const;

  Var weight;  // [cout, cin, k, k]
  Var bias;    // [cout] or null

 private:
  int stride_, padding_, dilation_;
};

/// 1-D convolution over the last axis of [N,C,L], mixing all channels.
class Conv1dAlong {
 public:
  Conv1dAlong(int channels, int k, bool with_bias, Rng& rng);

  Var forward(const Var& x) const;
  void collect(const std::string& prefix, ParamMap& out) const;

  Var weight;  // [C, C, k]
  Var bias;    // [C] or null

 private:
  int padding_;
};

/// Batch normalization with trainable affine and running statistics.
class BatchNorm2d {
 public:
  explicit BatchNorm2d(int channels);

  Var forward(const Var& x, Mode mode);
  void collect(const std::string& prefix, ParamMap& out);

  Var gamma;  // [C], init 1
  Var beta;   // [C], init 0
  BnStats stats;
};

/// conv -> batchnorm -> relu, the default block for every non-gate conv.
class ConvBnRelu {
 public:
  ConvBnRelu(int cin, int cout, int k, int stride, int padding, int dilation, Rng& rng);

  Var forward(const Var& x, Mode mode);
  void collect(const std::string& prefix, ParamMap& out);

  Conv2d conv;
  BatchNorm2d bn;
};

}  // namespace spnet
