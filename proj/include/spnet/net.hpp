#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "spnet/modules.hpp"

namespace spnet {

/// Four-stage dilated residual backbone description. With the default
/// dilation schedule [1,1,2,4] the deepest feature map sits at 1/8 of the
/// input resolution (output stride 8).
struct BackboneSpec {
  std::vector<int> stage_widths;        // 4 output channel counts, each divisible by 4
  std::vector<int> blocks_per_stage;    // 4 positive ints
  std::vector<int> dilation_per_stage;  // e.g. [1,1,2,4]
  int stem_width = 16;

  void validate() const;  // throws ConfigError naming the offending field
};

/// Where strip-pooling modules get inserted: after the 3x3 conv of the last
/// block in every stage, and/or after the 3x3 conv of every block in the
/// last stage. Both flags off disables SPMs entirely.
struct SpmPlacement {
  bool last_block_per_stage = false;
  bool all_blocks_last_stage = false;
  GateKind gate = GateKind::Strip;  // Global selects the SE-style baseline gate

  bool enabled() const { return last_block_per_stage || all_blocks_last_stage; }
  void validate() const;
};

/// Head configuration: 1x1 neck conv from the backbone output, a stack of
/// mixed pooling modules, the prediction conv, and the auxiliary head.
struct HeadSpec {
  int neck_width = 64;  // divisible by 4 whenever mpm_count > 0
  int mpm_count = 0;
  int num_classes = 6;
  MpmBranches mpm_branches = MpmBranches::Both;
  int aux_attach_stage = 3;  // 1-based stage whose output feeds the aux head
  int aux_width = 0;         // 0 derives attach-point width / 4

  void validate() const;
};

/// One residual bottleneck block: 1x1 reduce -> 3x3 (stride/dilation) ->
/// optional SPM -> 1x1 expand, with a projection shortcut when shapes change.
class BottleneckBlock {
 public:
  BottleneckBlock(int cin, int cout, int stride, int dilation, bool with_spm,
                  GateKind gate, Rng& rng);

  Var forward(const Var& x, Mode mode);
  void collect(const std::string& prefix, ParamMap& out);
  Spm* spm() { return spm_ ? &*spm_ : nullptr; }

 private:
  ConvBnRelu reduce_;
  ConvBnRelu mid_;
  std::optional<Spm> spm_;
  Conv2d expand_;  // 1x1, no bias
  BatchNorm2d bn_expand_;
  std::optional<Conv2d> proj_;  // 1x1 shortcut, no bias
  std::optional<BatchNorm2d> bn_proj_;
};

/// The assembled segmentation network: stem (stride 4), four residual
/// stages (stride 8 with the default dilation schedule), 1x1 neck, MPM
/// stack, 1x1 prediction conv with bilinear upsampling back to input
/// resolution, plus an auxiliary head attached to a configurable stage.
class Network {
 public:
  Network(BackboneSpec backbone, SpmPlacement placement, HeadSpec head,
          std::uint64_t seed);

  /// Returns (main_logits, aux_logits), both [N,K,H,W]. Input spatial
  /// extents must be >= the output stride and divisible by it. When
  /// with_aux is false the aux half is a null Var (skipped entirely).
  std::pair<Var, Var> forward(const Var& image, Mode mode, bool with_aux = true);

  ParamMap params();
  std::int64_t param_count_total();
  /// Coarse per-block parameter counts in architectural order:
  /// stem, stage1..stage4, neck, head (MPMs), aux_head, prediction.
  std::vector<std::pair<std::string, std::int64_t>> param_count_by_block();

  /// Diagnostic mode: force every SPM gate to 1 (see Spm).
  void force_spm_gate(bool on);

  int num_classes() const { return head_.num_classes; }
  int output_stride() const { return output_stride_; }
  const BackboneSpec& backbone_spec() const { return backbone_; }
  const SpmPlacement& placement_spec() const { return placement_; }
  const HeadSpec& head_spec() const { return head_; }
  std::uint64_t seed() const { return seed_; }

 private:
  BackboneSpec backbone_;
  SpmPlacement placement_;
  HeadSpec head_;
  std::uint64_t seed_;
  Rng rng_;  // construction-time draws only; declared before the layers
  int output_stride_ = 8;

  ConvBnRelu stem1_;
  ConvBnRelu stem2_;
  std::vector<std::vector<BottleneckBlock>> stages_;
  ConvBnRelu neck_;
  std::vector<Mpm> mpms_;
  ConvBnRelu aux_conv_;
  Conv2d aux_pred_;  // 1x1, with bias
  Conv2d pred_;      // 1x1, with bias
};

/// Validates all three specs and constructs the network deterministically
/// from the seed.
std::unique_ptr<Network> build_spnet(const BackboneSpec& backbone,
                                     const SpmPlacement& placement, const HeadSpec& head,
                                     std::uint64_t seed);

/// Forward pass with input-contract checking (extent >= stride and divisible
/// by it); returns (main_logits, aux_logits) at full input resolution.
std::pair<Var, Var> forward_segmentation(Network& net, const Var& image, Mode mode,
                                         bool with_aux = true);

}  // namespace spnet
