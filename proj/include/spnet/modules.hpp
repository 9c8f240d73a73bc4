#pragma once

#include <optional>

#include "spnet/nn.hpp"
#include "spnet/pooling.hpp"

namespace spnet {

/// Summary of the most recent gate activation sigma(f(y)).
struct GateStats {
  float min = 0.0f;
  float max = 0.0f;
  float mean = 0.0f;
};

/// Which pooling feeds the gate: strip profiles (the SPM proper) or a single
/// global average (the SE-style ablation baseline).
enum class GateKind { Strip, Global };

struct BranchTrace;

/// Strip Pooling Module: gates the input with sigma(fuse(yh + yv)) where yh
/// and yv are 1-D conv transforms of the horizontal / vertical strip-pool
/// profiles. Shape preserving; drop-in insertable.
class Spm {
 public:
  Spm(int channels, GateKind kind, Rng& rng);

  Var forward(const Var& x, Mode mode, BranchTrace* trace = nullptr);
  void collect(const std::string& prefix, ParamMap& out);

  GateStats last_gate() const { return last_gate_; }

  /// Diagnostic mode: treat the gate as identically 1, making the module the
  /// identity map while leaving its parameters untouched.
  void set_gate_override_one(bool on) { gate_override_one_ = on; }

  int channels() const { return channels_; }
  GateKind kind() const { return kind_; }

 private:
  int channels_;
  GateKind kind_;
  Conv1dAlong conv_h_;
  BatchNorm2d bn_h_;
  Conv1dAlong conv_v_;
  BatchNorm2d bn_v_;
  Conv2d fuse_;  // 1x1, no bias (batchnorm follows)
  BatchNorm2d bn_fuse_;
  bool gate_override_one_ = false;
  GateStats last_gate_;
};

/// Optional probe filled during a module forward pass, for cross-checking
/// internals against reference constructions.
struct BranchTrace {
  Tensor profile_h;   // post-activation horizontal profile [N,C,H,1]
  Tensor profile_v;   // post-activation vertical profile [N,C,1,W]
  Tensor prefusion;   // sum of branch paths before the fusion conv
  Tensor path_a;      // SRD: first pyramid path after upsampling
  Tensor path_b;      // SRD: second pyramid path after upsampling
  Tensor gate;        // SPM: sigma(fuse(...)) activation
};

/// Long-range dependency sub-module: two strip-pool paths, broadcast back to
/// the full map, summed, then fused by a 3x3 conv.
class Lrd {
 public:
  Lrd(int channels, Rng& rng);

  Var forward(const Var& x, Mode mode, BranchTrace* trace = nullptr);
  void collect(const std::string& prefix, ParamMap& out);

 private:
  Conv1dAlong conv_h_;
  BatchNorm2d bn_h_;
  Conv1dAlong conv_v_;
  BatchNorm2d bn_v_;
  ConvBnRelu fuse_;
};

/// Short-range dependency sub-module: a two-level pooling pyramid (bins
/// clamped to the input extent) plus an identity-resolution conv path, summed
/// and fused by a 3x3 conv.
class Srd {
 public:
  Srd(int channels, BinGrid bins_a, BinGrid bins_b, Rng& rng);

  Var forward(const Var& x, Mode mode, BranchTrace* trace = nullptr);
  void collect(const std::string& prefix, ParamMap& out);

  BinGrid bins_a() const { return bins_a_; }
  BinGrid bins_b() const { return bins_b_; }

 private:
  BinGrid bins_a_;
  BinGrid bins_b_;
  ConvBnRelu conv_a_;
  ConvBnRelu conv_b_;
  ConvBnRelu conv_id_;
  ConvBnRelu fuse_;
};

/// Branch selection for the ablation presets.
enum class MpmBranches { Both, SrdOnly, LrdOnly };

/// Mixed Pooling Module: residual bottleneck wrapping the SRD and LRD
/// sub-modules, with 1x1 reduction to in/4 channels per branch and a 1x1
/// expansion back. out = x + expand(concat(srd(...), lrd(...))).
class Mpm {
 public:
  Mpm(int in_channels, MpmBranches branches, Rng& rng);

  Var forward(const Var& x, Mode mode);
  void collect(const std::string& prefix, ParamMap& out);

  int in_channels() const { return in_channels_; }
  int bottleneck_channels() const { return in_channels_ / 4; }
  MpmBranches branches() const { return branches_; }

  /// Direct access to the expansion conv (tests zero it for the residual
  /// identity check).
  Conv2d& expand() { return expand_; }

 private:
  int in_channels_;
  MpmBranches branches_;
  std::optional<ConvBnRelu> reduce_srd_;
  std::optional<ConvBnRelu> reduce_lrd_;
  std::optional<Srd> srd_;
  std::optional<Lrd> lrd_;
  Conv2d expand_;  // 1x1, no bias (batchnorm follows)
  BatchNorm2d bn_expand_;
};

/// Default pyramid bin sizes for the SRD sub-module.
inline constexpr int kSrdBinsA = 20;
inline constexpr int kSrdBinsB = 12;

}  // namespace spnet
