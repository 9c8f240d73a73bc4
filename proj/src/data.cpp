#include "spnet/data.hpp"

#include <algorithm>
#include <string>

namespace spnet {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

bool banded(ShapeFamily f) {
  return f == ShapeFamily::HorizontalBand || f == ShapeFamily::VerticalBand;
}

bool discrete(ShapeFamily f) {
  return f == ShapeFamily::BlobsAligned || f == ShapeFamily::SquareBlob;
}

void paint_rect(SegmentationSample& s, const std::array<float, 3>& color, int cls, int r0,
                int c0, int r1, int c1) {
  const int H = s.height(), W = s.width();
  r0 = std::max(r0, 0);
  c0 = std::max(c0, 0);
  r1 = std::min(r1, H);
  c1 = std::min(c1, W);
  for (int r = r0; r < r1; ++r)
    for (int c = c0; c < c1; ++c) {
      for (int ch = 0; ch < 3; ++ch)
        s.image.data[(static_cast<std::size_t>(ch) * H + r) * W + c] = color[ch];
      s.labels.at(0, r, c) = cls;
    }
}

}  // namespace

void SyntheticSceneSpec::validate() const {
  require(canvas >= 8, "scene.canvas: must be >= 8, got " + std::to_string(canvas));
  require(num_classes >= 2,
          "scene.num_classes: must be >= 2, got " + std::to_string(num_classes));
  require(families.size() == static_cast<std::size_t>(num_classes),
          "scene.families: expected one family per class (" + std::to_string(num_classes) +
              "), got " + std::to_string(families.size()));
  require(families[0] == ShapeFamily::Background,
          "scene.families: class 0 must be Background");
  bool any_band = false, any_discrete = false, extra_background = false;
  for (std::size_t c = 1; c < families.size(); ++c) {
    any_band = any_band || banded(families[c]);
    any_discrete = any_discrete || discrete(families[c]);
    extra_background = extra_background || families[c] == ShapeFamily::Background;
  }
  require(!extra_background, "scene.families: only class 0 may be Background");
  require(any_band && any_discrete,
          "scene.families: families must cover both banded and discrete structure");
  require(noise >= 0.0f && noise <= 0.5f,
          "scene.noise: must be in [0, 0.5], got " + std::to_string(noise));
  require(inclusion_prob > 0.0f && inclusion_prob <= 1.0f,
          "scene.inclusion_prob: must be in (0, 1], got " + std::to_string(inclusion_prob));
}

SyntheticSceneSpec default_scene_spec() {
  SyntheticSceneSpec spec;
  spec.families = {ShapeFamily::Background,   ShapeFamily::HorizontalBand,
                   ShapeFamily::VerticalBand, ShapeFamily::BlobsAligned,
                   ShapeFamily::SquareBlob,   ShapeFamily::VerticalBand};
  return spec;
}

void SegmentationSample::validate() const {
  check_shape(image.shape, "sample.image");
  require(image.shape.size() == 3 && image.shape[0] == 3,
          "sample.image: expected shape [3,H,W], got " + shape_str(image.shape));
  require(image.shape[1] == labels.h && image.shape[2] == labels.w,
          "sample.labels: spatial extents do not match the image");
  const bool any_valid = std::any_of(labels.data.begin(), labels.data.end(),
                                     [](std::int32_t v) { return v != kIgnoreLabel; });
  require(any_valid, "sample.labels: every pixel is ignore-labeled");
}

std::array<float, 3> class_color(const SyntheticSceneSpec& spec, int cls) {
  require(cls >= 0 && cls < spec.num_classes, "class_color: class id out of range");
  if (cls == 0) return {0.16f, 0.16f, 0.20f};  // dark background
  // Bands paint red, discrete shapes and any further bands paint green: each
  // color group is only separable through long-range shape context.
  const ShapeFamily f = spec.families[static_cast<std::size_t>(cls)];
  if ((f == ShapeFamily::HorizontalBand || f == ShapeFamily::VerticalBand) && cls <= 2)
    return {0.80f, 0.22f, 0.22f};  // red group
  return {0.22f, 0.72f, 0.28f};    // green group
}

SegmentationSample generate_scene(const SyntheticSceneSpec& spec) {
  Rng rng(spec.seed);
  return generate_scene(spec, rng);
}

SegmentationSample generate_scene(const SyntheticSceneSpec& spec, Rng& rng) {
  spec.validate();
  const int S = spec.canvas;
  SegmentationSample s;
  s.image = Tensor({3, S, S});
  s.labels = LabelMap(1, S, S, 0);
  paint_rect(s, class_color(spec, 0), 0, 0, 0, S, S);

  // Which classes appear, painted in a shuffled order so no class
  // systematically occludes another.
  std::vector<int> order;
  for (int c = 1; c < spec.num_classes; ++c)
    if (rng.bernoulli(spec.inclusion_prob)) order.push_back(c);
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[static_cast<std::size_t>(
                                rng.uniform_int(static_cast<int>(i)))]);

  // Every family is drawn from the same square-dash vocabulary: side a in
  // [6,8] (about one output-stride cell) and a repeat period of a+24..a+30,
  // so the gap between dashes is far wider than any single convolution
  // stack's view. One dash in isolation carries no class information at all.
  // A band is a dash chain from edge to edge (first dash pinned within two
  // pixels of the canvas edge), the aligned-blob chain is exactly two dashes
  // away from every edge, and the square blob is a solitary dash. Within a
  // color group only the long-range arrangement -- repetition axis, edge
  // reach, partner presence -- separates the classes.
  for (int cls : order) {
    const std::array<float, 3> color = class_color(spec, cls);
    const int a = 6 + rng.uniform_int(3);            // dash side 6..8
    const int period = a + 24 + rng.uniform_int(7);  // gap 24..30 beyond local view
    switch (spec.families[static_cast<std::size_t>(cls)]) {
      case ShapeFamily::Background:
        break;  // unreachable: validate() forbids it past class 0
      case ShapeFamily::HorizontalBand: {
        const int r = rng.uniform_int(S - a + 1);
        for (int x = rng.uniform_int(3); x < S; x += period)
          paint_rect(s, color, cls, r, x, r + a, x + a);
        break;
      }
      case ShapeFamily::VerticalBand: {
        const int c = rng.uniform_int(S - a + 1);
        for (int y = rng.uniform_int(3); y < S; y += period)
          paint_rect(s, color, cls, y, c, y + a, c + a);
        break;
      }
      case ShapeFamily::BlobsAligned: {
        const int span = period + a;  // two dashes
        const int row = rng.uniform_int(S - a + 1);
        const int x0 = 5 + rng.uniform_int(std::max(S - span - 10, 1));
        paint_rect(s, color, cls, row, x0, row + a, x0 + a);
        paint_rect(s, color, cls, row, x0 + period, row + a, x0 + period + a);
        break;
      }
      case ShapeFamily::SquareBlob: {
        const int r = rng.uniform_int(S - a + 1);
        const int c = 2 + rng.uniform_int(std::max(S - a - 4, 1));
        paint_rect(s, color, cls, r, c, r + a, c + a);
        break;
      }
    }
  }

  if (spec.noise > 0.0f)
    for (float& v : s.image.data)
      v = std::clamp(v + spec.noise * static_cast<float>(rng.normal()), 0.0f, 1.0f);
  s.validate();
  return s;
}

std::vector<SegmentationSample> generate_corpus(const SyntheticSceneSpec& spec, int count) {
  require(count >= 1, "corpus: count must be >= 1, got " + std::to_string(count));
  Rng root(spec.seed);
  std::vector<SegmentationSample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    Rng child = root.child(static_cast<std::uint64_t>(i) + 1);
    out.push_back(generate_scene(spec, child));
  }
  return out;
}

bool class_present(const SegmentationSample& sample, int cls) {
  return std::any_of(sample.labels.data.begin(), sample.labels.data.end(),
                     [cls](std::int32_t v) { return v == cls; });
}

}  // namespace spnet
