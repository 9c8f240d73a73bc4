#include "spnet/net.hpp"

#include <utility>

namespace spnet {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

int stage_stride(const BackboneSpec& b, int stage) {
  // A stage downsamples unless it is the first stage or runs dilated.
  return (stage == 0 || b.dilation_per_stage[static_cast<std::size_t>(stage)] != 1) ? 1 : 2;
}

}  // namespace

void BackboneSpec::validate() const {
  require(stage_widths.size() == 4, "backbone.stage_widths: expected exactly 4 entries");
  require(blocks_per_stage.size() == 4, "backbone.blocks_per_stage: expected exactly 4 entries");
  require(dilation_per_stage.size() == 4,
          "backbone.dilation_per_stage: expected exactly 4 entries");
  for (int w : stage_widths)
    require(w > 0 && w % 4 == 0,
            "backbone.stage_widths: every width must be positive and divisible by 4, got " +
                std::to_string(w));
  for (int b : blocks_per_stage)
    require(b >= 1, "backbone.blocks_per_stage: every count must be >= 1, got " +
                        std::to_string(b));
  for (int d : dilation_per_stage)
    require(d >= 1, "backbone.dilation_per_stage: every dilation must be >= 1, got " +
                        std::to_string(d));
  require(stem_width >= 1, "backbone.stem_width: must be >= 1, got " +
                               std::to_string(stem_width));
}

void SpmPlacement::validate() const {
  // Both flags off is the valid "no SPMs" configuration; any combination of
  // flags is buildable because the module is shape preserving.
}

void HeadSpec::validate() const {
  require(neck_width >= 1, "head.neck_width: must be >= 1, got " + std::to_string(neck_width));
  require(mpm_count >= 0, "head.mpm_count: must be >= 0, got " + std::to_string(mpm_count));
  if (mpm_count > 0)
    require(neck_width % 4 == 0,
            "head.neck_width: must be divisible by 4 when mpm_count > 0, got " +
                std::to_string(neck_width));
  require(num_classes >= 1,
          "head.num_classes: must be >= 1, got " + std::to_string(num_classes));
  require(aux_attach_stage >= 1 && aux_attach_stage <= 4,
          "head.aux_attach_stage: must be in 1..4, got " + std::to_string(aux_attach_stage));
  require(aux_width >= 0, "head.aux_width: must be >= 0 (0 derives attach width / 4), got " +
                              std::to_string(aux_width));
}

BottleneckBlock::BottleneckBlock(int cin, int cout, int stride, int dilation, bool with_spm,
                                 GateKind gate, Rng& rng)
    : reduce_(cin, cout / 4, 1, 1, 0, 1, rng),
      mid_(cout / 4, cout / 4, 3, stride, dilation, dilation, rng),
      spm_(with_spm ? std::optional<Spm>(Spm(cout / 4, gate, rng)) : std::nullopt),
      expand_(cout / 4, cout, 1, 1, 0, 1, /*with_bias=*/false, rng),
      bn_expand_(cout),
      proj_(cin != cout || stride != 1
                ? std::optional<Conv2d>(Conv2d(cin, cout, 1, stride, 0, 1, false, rng))
                : std::nullopt),
      bn_proj_(proj_ ? std::optional<BatchNorm2d>(BatchNorm2d(cout)) : std::nullopt) {}

Var BottleneckBlock::forward(const Var& x, Mode mode) {
  Var y = reduce_.forward(x, mode);
  y = mid_.forward(y, mode);
  if (spm_) y = spm_->forward(y, mode);
  y = bn_expand_.forward(expand_.forward(y), mode);
  Var shortcut = proj_ ? bn_proj_->forward(proj_->forward(x), mode) : x;
  return relu(add(y, shortcut));
}

void BottleneckBlock::collect(const std::string& prefix, ParamMap& out) {
  reduce_.collect(prefix + ".reduce", out);
  mid_.collect(prefix + ".mid", out);
  if (spm_) spm_->collect(prefix + ".spm", out);
  expand_.collect(prefix + ".expand", out);
  bn_expand_.collect(prefix + ".bn_expand", out);
  if (proj_) {
    proj_->collect(prefix + ".proj", out);
    bn_proj_->collect(prefix + ".bn_proj", out);
  }
}

namespace {

int aux_attach_width(const BackboneSpec& b, const HeadSpec& h) {
  return b.stage_widths[static_cast<std::size_t>(h.aux_attach_stage - 1)];
}

int aux_head_width(const BackboneSpec& b, const HeadSpec& h) {
  return h.aux_width > 0 ? h.aux_width : aux_attach_width(b, h) / 4;
}

}  // namespace

Network::Network(BackboneSpec backbone, SpmPlacement placement, HeadSpec head,
                 std::uint64_t seed)
    // All three specs are validated before any member below indexes into them.
    : backbone_((backbone.validate(), placement.validate(), head.validate(),
                 std::move(backbone))),
      placement_(placement),
      head_(head),
      seed_(seed),
      rng_(seed),
      stem1_(3, backbone_.stem_width, 3, 2, 1, 1, rng_),
      stem2_(backbone_.stem_width, backbone_.stem_width, 3, 2, 1, 1, rng_),
      neck_(backbone_.stage_widths[3], head_.neck_width, 1, 1, 0, 1, rng_),
      aux_conv_(aux_attach_width(backbone_, head_), aux_head_width(backbone_, head_), 3, 1, 1,
                1, rng_),
      aux_pred_(aux_head_width(backbone_, head_), head_.num_classes, 1, 1, 0, 1, true, rng_),
      pred_(head_.neck_width, head_.num_classes, 1, 1, 0, 1, true, rng_) {
  int cin = backbone_.stem_width;
  int stride_so_far = 4;  // two stride-2 stem convs
  for (int s = 0; s < 4; ++s) {
    const int cout = backbone_.stage_widths[static_cast<std::size_t>(s)];
    const int blocks = backbone_.blocks_per_stage[static_cast<std::size_t>(s)];
    const int dilation = backbone_.dilation_per_stage[static_cast<std::size_t>(s)];
    const int stride = stage_stride(backbone_, s);
    stride_so_far *= stride;
    std::vector<BottleneckBlock> stage;
    stage.reserve(static_cast<std::size_t>(blocks));
    for (int b = 0; b < blocks; ++b) {
      const bool last_block = (b == blocks - 1);
      const bool with_spm =
          placement_.enabled() && ((placement_.last_block_per_stage && last_block) ||
                                   (placement_.all_blocks_last_stage && s == 3));
      stage.emplace_back(cin, cout, b == 0 ? stride : 1, dilation, with_spm, placement_.gate,
                         rng_);
      cin = cout;
    }
    stages_.push_back(std::move(stage));
  }
  output_stride_ = stride_so_far;

  mpms_.reserve(static_cast<std::size_t>(head_.mpm_count));
  for (int i = 0; i < head_.mpm_count; ++i)
    mpms_.emplace_back(head_.neck_width, head_.mpm_branches, rng_);
}

std::pair<Var, Var> Network::forward(const Var& image, Mode mode, bool with_aux) {
  check_shape(image->value.shape, "image");
  if (image->value.shape.size() != 4 || image->value.shape[1] != 3)
    throw ConfigError("image: expected 3 input channels, got shape " +
                      shape_str(image->value.shape));
  const int H = image->value.shape[2], W = image->value.shape[3];
  if (H < output_stride_ || W < output_stride_ || H % output_stride_ != 0 ||
      W % output_stride_ != 0)
    throw ConfigError("image: spatial extents must be >= " + std::to_string(output_stride_) +
                      " and divisible by " + std::to_string(output_stride_) +
                      " (the output stride), got " + std::to_string(H) + "x" +
                      std::to_string(W));

  Var y = stem2_.forward(stem1_.forward(image, mode), mode);
  Var aux_feat;
  for (int s = 0; s < 4; ++s) {
    for (auto& block : stages_[static_cast<std::size_t>(s)]) y = block.forward(y, mode);
    if (s + 1 == head_.aux_attach_stage) aux_feat = y;
  }

  Var n = neck_.forward(y, mode);
  for (auto& mpm : mpms_) n = mpm.forward(n, mode);
  Var main_logits = bilinear_upsample(pred_.forward(n), H, W);

  Var aux_logits;
  if (with_aux) {
    Var a = aux_conv_.forward(aux_feat, mode);
    aux_logits = bilinear_upsample(aux_pred_.forward(a), H, W);
  }
  return {main_logits, aux_logits};
}

ParamMap Network::params() {
  ParamMap pm;
  stem1_.collect("stem1", pm);
  stem2_.collect("stem2", pm);
  for (int s = 0; s < 4; ++s) {
    auto& stage = stages_[static_cast<std::size_t>(s)];
    for (std::size_t b = 0; b < stage.size(); ++b)
      stage[b].collect("stage" + std::to_string(s + 1) + ".block" + std::to_string(b), pm);
  }
  neck_.collect("neck", pm);
  for (std::size_t i = 0; i < mpms_.size(); ++i)
    mpms_[i].collect("head.mpm" + std::to_string(i), pm);
  aux_conv_.collect("aux.conv", pm);
  aux_pred_.collect("aux.pred", pm);
  pred_.collect("pred", pm);
  return pm;
}

std::int64_t Network::param_count_total() {
  ParamMap pm = params();
  return param_count(pm);
}

std::vector<std::pair<std::string, std::int64_t>> Network::param_count_by_block() {
  std::vector<std::pair<std::string, std::int64_t>> out;
  auto group = [&](const std::string& name, auto&& fill) {
    ParamMap pm;
    fill(pm);
    out.emplace_back(name, param_count(pm));
  };
  group("stem", [&](ParamMap& pm) {
    stem1_.collect("stem1", pm);
    stem2_.collect("stem2", pm);
  });
  for (int s = 0; s < 4; ++s)
    group("stage" + std::to_string(s + 1), [&](ParamMap& pm) {
      auto& stage = stages_[static_cast<std::size_t>(s)];
      for (std::size_t b = 0; b < stage.size(); ++b)
        stage[b].collect("block" + std::to_string(b), pm);
    });
  group("neck", [&](ParamMap& pm) { neck_.collect("neck", pm); });
  group("head", [&](ParamMap& pm) {
    for (std::size_t i = 0; i < mpms_.size(); ++i)
      mpms_[i].collect("mpm" + std::to_string(i), pm);
  });
  group("aux_head", [&](ParamMap& pm) {
    aux_conv_.collect("conv", pm);
    aux_pred_.collect("pred", pm);
  });
  group("prediction", [&](ParamMap& pm) { pred_.collect("pred", pm); });
  return out;
}

void Network::force_spm_gate(bool on) {
  for (auto& stage : stages_)
    for (auto& block : stage)
      if (Spm* s = block.spm()) s->set_gate_override_one(on);
}

std::unique_ptr<Network> build_spnet(const BackboneSpec& backbone,
                                     const SpmPlacement& placement, const HeadSpec& head,
                                     std::uint64_t seed) {
  backbone.validate();
  placement.validate();
  head.validate();
  return std::make_unique<Network>(backbone, placement, head, seed);
}

std::pair<Var, Var> forward_segmentation(Network& net, const Var& image, Mode mode,
                                         bool with_aux) {
  return net.forward(image, mode, with_aux);
}

}  // namespace spnet
