#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "spnet/rng.hpp"
#include "spnet/tensor.hpp"

namespace spnet {

/// Shape families rendered by the synthetic scene generator. The set spans
/// both long-range banded structure (full-extent horizontal / vertical
/// stripes) and discretely distributed structure (aligned blob chains,
/// isolated squares).
enum class ShapeFamily {
  Background,
  HorizontalBand,
  VerticalBand,
  BlobsAligned,  // a row of small squares: banded at long range, discrete locally
  SquareBlob,
};

/// Configuration for one synthetic scene. Class c is rendered with family
/// families[c]; classes sharing a paint color are locally ambiguous and can
/// only be told apart by their long-range arrangement, which is what makes
/// the corpus discriminative for strip-shaped context aggregation.
struct SyntheticSceneSpec {
  int canvas = 64;
  int num_classes = 6;
  std::vector<ShapeFamily> families;  // size num_classes; families[0] == Background
  float noise = 0.05f;                // Gaussian sigma added per pixel/channel
  float inclusion_prob = 0.8f;        // presence probability of each non-background class
  std::uint64_t seed = 0;

  void validate() const;  // throws ConfigError naming the offending field
};

/// Default 6-class spec: background, two red bands (horizontal vs vertical),
/// and three green shapes (aligned blob chain, isolated square, vertical
/// band) — each color group is locally ambiguous.
SyntheticSceneSpec default_scene_spec();

/// One image/label pair. Image values lie in [0,1]; labels are class ids or
/// kIgnoreLabel.
struct SegmentationSample {
  Tensor image;     // [3,H,W]
  LabelMap labels;  // n == 1

  int height() const { return labels.h; }
  int width() const { return labels.w; }
  void validate() const;  // extents match, >= 1 non-ignore pixel
};

/// Paint color of a class (shared within each ambiguity group).
std::array<float, 3> class_color(const SyntheticSceneSpec& spec, int cls);

/// Deterministic scene from spec.seed.
SegmentationSample generate_scene(const SyntheticSceneSpec& spec);

/// Scene drawn from an explicit stream (used by the corpus generator).
SegmentationSample generate_scene(const SyntheticSceneSpec& spec, Rng& rng);

/// `count` scenes from independent child streams of spec.seed, so any prefix
/// of the corpus is stable under count changes.
std::vector<SegmentationSample> generate_corpus(const SyntheticSceneSpec& spec, int count);

/// True if class `cls` received any pixels in the sample's label map.
bool class_present(const SegmentationSample& sample, int cls);

}  // namespace spnet
