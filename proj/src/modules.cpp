#include "spnet/modules.hpp"

#include <algorithm>

namespace spnet {

namespace {

// Strip-pool profile -> 1-D conv -> batchnorm -> relu, returned in the
// original singleton-axis layout so it broadcasts against the full map.
Var profile_path(const Var& pooled, bool horizontal, Conv1dAlong& conv, BatchNorm2d& bn,
                 Mode mode) {
  const int N = pooled->value.shape[0];
  const int C = pooled->value.shape[1];
  const int L = horizontal ? pooled->value.shape[2] : pooled->value.shape[3];
  Var seq = reshape(pooled, {N, C, L});
  Var y = conv.forward(seq);
  Var back = horizontal ? reshape(y, {N, C, L, 1}) : reshape(y, {N, C, 1, L});
  return relu(bn.forward(back, mode));
}

GateStats summarize_gate(const Tensor& gate) {
  GateStats s;
  s.min = gate.data[0];
  s.max = gate.data[0];
  double acc = 0.0;
  for (float v : gate.data) {
    s.min = std::min(s.min, v);
    s.max = std::max(s.max, v);
    acc += v;
  }
  s.mean = static_cast<float>(acc / static_cast<double>(gate.data.size()));
  return s;
}

}  // namespace

// ---- Spm ---------------------------------------------------------------------

Spm::Spm(int channels, GateKind kind, Rng& rng)
    : channels_(channels),
      kind_(kind),
      conv_h_(channels, 3, /*with_bias=*/false, rng),
      bn_h_(channels),
      conv_v_(channels, 3, /*with_bias=*/false, rng),
      bn_v_(channels),
      fuse_(channels, channels, 1, 1, 0, 1, /*with_bias=*/false, rng),
      bn_fuse_(channels) {}

Var Spm::forward(const Var& x, Mode mode, BranchTrace* trace) {
  if (x->value.rank() != 4 || x->value.shape[1] != channels_) {
    throw ConfigError("Spm: expected input with " + std::to_string(channels_) +
                      " channels, got " + shape_str(x->value.shape));
  }
  Var yh, yv;
  if (kind_ == GateKind::Strip) {
    yh = profile_path(strip_pool_h(x), /*horizontal=*/true, conv_h_, bn_h_, mode);
    yv = profile_path(strip_pool_v(x), /*horizontal=*/false, conv_v_, bn_v_, mode);
  } else {
    Var pooled = global_avg_pool(x);
    yh = profile_path(pooled, /*horizontal=*/true, conv_h_, bn_h_, mode);
    yv = profile_path(pooled, /*horizontal=*/false, conv_v_, bn_v_, mode);
  }
  Var fused = add(yh, yv);
  Var gate = sigmoid(bn_fuse_.forward(fuse_.forward(fused), mode));
  last_gate_ = summarize_gate(gate->value);
  if (trace) {
    trace->profile_h = yh->value;
    trace->profile_v = yv->value;
    trace->prefusion = fused->value;
    trace->gate = gate->value;
  }
  if (gate_override_one_) return x;
  return mul(x, gate);
}

void Spm::collect(const std::string& prefix, ParamMap& out) {
  conv_h_.collect(prefix + ".conv_h", out);
  bn_h_.collect(prefix + ".bn_h", out);
  conv_v_.collect(prefix + ".conv_v", out);
  bn_v_.collect(prefix + ".bn_v", out);
  fuse_.collect(prefix + ".fuse", out);
  bn_fuse_.collect(prefix + ".bn_fuse", out);
}

// ---- Lrd ---------------------------------------------------------------------

Lrd::Lrd(int channels, Rng& rng)
    : conv_h_(channels, 3, /*with_bias=*/false, rng),
      bn_h_(channels),
      conv_v_(channels, 3, /*with_bias=*/false, rng),
      bn_v_(channels),
      fuse_(channels, channels, 3, 1, 1, 1, rng) {}

Var Lrd::forward(const Var& x, Mode mode, BranchTrace* trace) {
  Var yh = profile_path(strip_pool_h(x), /*horizontal=*/true, conv_h_, bn_h_, mode);
  Var yv = profile_path(strip_pool_v(x), /*horizontal=*/false, conv_v_, bn_v_, mode);
  Var pre = add(yh, yv);  // broadcast expansion + summation in one step
  if (trace) {
    trace->profile_h = yh->value;
    trace->profile_v = yv->value;
    trace->prefusion = pre->value;
  }
  return fuse_.forward(pre, mode);
}

void Lrd::collect(const std::string& prefix, ParamMap& out) {
  conv_h_.collect(prefix + ".conv_h", out);
  bn_h_.collect(prefix + ".bn_h", out);
  conv_v_.collect(prefix + ".conv_v", out);
  bn_v_.collect(prefix + ".bn_v", out);
  fuse_.collect(prefix + ".fuse", out);
}

// ---- Srd ---------------------------------------------------------------------

Srd::Srd(int channels, BinGrid bins_a, BinGrid bins_b, Rng& rng)
    : bins_a_(bins_a),
      bins_b_(bins_b),
      conv_a_(channels, channels, 3, 1, 1, 1, rng),
      conv_b_(channels, channels, 3, 1, 1, 1, rng),
      conv_id_(channels, channels, 3, 1, 1, 1, rng),
      fuse_(channels, channels, 3, 1, 1, 1, rng) {}

Var Srd::forward(const Var& x, Mode mode, BranchTrace* trace) {
  const int H = x->value.shape[2], W = x->value.shape[3];
  const BinGrid ga{std::min(bins_a_.bins_h, H), std::min(bins_a_.bins_w, W)};
  const BinGrid gb{std::min(bins_b_.bins_h, H), std::min(bins_b_.bins_w, W)};
  Var pa = bilinear_upsample(conv_a_.forward(adaptive_avg_pool2d(x, ga), mode), H, W);
  Var pb = bilinear_upsample(conv_b_.forward(adaptive_avg_pool2d(x, gb), mode), H, W);
  Var pid = conv_id_.forward(x, mode);
  Var pre = add(add(pa, pb), pid);
  if (trace) {
    trace->path_a = pa->value;
    trace->path_b = pb->value;
    trace->prefusion = pre->value;
  }
  return fuse_.forward(pre, mode);
}

void Srd::collect(const std::string& prefix, ParamMap& out) {
  conv_a_.collect(prefix + ".path_a", out);
  conv_b_.collect(prefix + ".path_b", out);
  conv_id_.collect(prefix + ".path_id", out);
  fuse_.collect(prefix + ".fuse", out);
}

// ---- Mpm ---------------------------------------------------------------------

namespace {

int mpm_bottleneck(int in_channels) {
  if (in_channels % 4 != 0) {
    throw ConfigError("Mpm: in_channels must be divisible by 4, got " +
                      std::to_string(in_channels));
  }
  return in_channels / 4;
}

int mpm_concat_channels(int in_channels, MpmBranches branches) {
  const int b = mpm_bottleneck(in_channels);
  return branches == MpmBranches::Both ? 2 * b : b;
}

}  // namespace

Mpm::Mpm(int in_channels, MpmBranches branches, Rng& rng)
    : in_channels_(in_channels),
      branches_(branches),
      expand_(mpm_concat_channels(in_channels, branches), in_channels, 1, 1, 0, 1,
              /*with_bias=*/false, rng),
      bn_expand_(in_channels) {
  const int b = mpm_bottleneck(in_channels);
  if (branches_ != MpmBranches::LrdOnly) {
    reduce_srd_.emplace(in_channels, b, 1, 1, 0, 1, rng);
    srd_.emplace(b, BinGrid{kSrdBinsA, kSrdBinsA}, BinGrid{kSrdBinsB, kSrdBinsB}, rng);
  }
  if (branches_ != MpmBranches::SrdOnly) {
    reduce_lrd_.emplace(in_channels, b, 1, 1, 0, 1, rng);
    lrd_.emplace(b, rng);
  }
}

Var Mpm::forward(const Var& x, Mode mode) {
  if (x->value.rank() != 4 || x->value.shape[1] != in_channels_) {
    throw ConfigError("Mpm: expected input with " + std::to_string(in_channels_) +
                      " channels, got " + shape_str(x->value.shape));
  }
  Var body;
  if (branches_ == MpmBranches::Both) {
    Var s = srd_->forward(reduce_srd_->forward(x, mode), mode);
    Var l = lrd_->forward(reduce_lrd_->forward(x, mode), mode);
    body = concat_channels(s, l);
  } else if (branches_ == MpmBranches::SrdOnly) {
    body = srd_->forward(reduce_srd_->forward(x, mode), mode);
  } else {
    body = lrd_->forward(reduce_lrd_->forward(x, mode), mode);
  }
  Var r = relu(bn_expand_.forward(expand_.forward(body), mode));
  return add(x, r);
}

void Mpm::collect(const std::string& prefix, ParamMap& out) {
  if (reduce_srd_) {
    reduce_srd_->collect(prefix + ".reduce_srd", out);
    srd_->collect(prefix + ".srd", out);
  }
  if (reduce_lrd_) {
    reduce_lrd_->collect(prefix + ".reduce_lrd", out);
    lrd_->collect(prefix + ".lrd", out);
  }
  expand_.collect(prefix + ".expand", out);
  bn_expand_.collect(prefix + ".bn_expand", out);
}

}  // namespace spnet
