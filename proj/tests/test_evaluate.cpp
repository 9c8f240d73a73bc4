#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "spnet/evaluate.hpp"

using namespace spnet;

namespace {

std::unique_ptr<Network> tiny_net(int classes, std::uint64_t seed) {
  BackboneSpec b;
  b.stage_widths = {8, 16, 24, 32};
  b.blocks_per_stage = {1, 1, 1, 1};
  b.dilation_per_stage = {1, 1, 2, 4};
  b.stem_width = 8;
  HeadSpec h;
  h.neck_width = 16;
  h.mpm_count = 1;
  h.num_classes = classes;
  return build_spnet(b, SpmPlacement{}, h, seed);
}

}  // namespace

TEST_CASE("softmax: rows sum to one, uniform logits give 1/K, large logits stay finite") {
  Rng rng(50);
  Tensor logits = oracle::random_tensor({2, 4, 3, 3}, rng, -3.0f, 3.0f);
  Tensor p = softmax_channels(logits);
  for (int n = 0; n < 2; ++n)
    for (int h = 0; h < 3; ++h)
      for (int w = 0; w < 3; ++w) {
        float sum = 0.0f;
        for (int k = 0; k < 4; ++k) sum += p.at4(n, k, h, w);
        CHECK(sum == doctest::Approx(1.0f).epsilon(1e-5));
      }

  Tensor uniform({1, 5, 2, 2}, 3.3f);
  Tensor pu = softmax_channels(uniform);
  for (float v : pu.data) CHECK(v == doctest::Approx(0.2f).epsilon(1e-6));

  Tensor huge({1, 3, 1, 1});
  huge.data = {1000.0f, 999.0f, -1000.0f};
  Tensor ph = softmax_channels(huge);
  CHECK(ph.all_finite());
  CHECK(ph.data[0] > ph.data[1]);
}

TEST_CASE("argmax: ties resolve to the lowest class id") {
  Tensor probs({1, 3, 1, 2});
  // pixel 0: clear winner class 2; pixel 1: exact tie between 0 and 2
  probs.at4(0, 0, 0, 0) = 0.1f;
  probs.at4(0, 1, 0, 0) = 0.2f;
  probs.at4(0, 2, 0, 0) = 0.7f;
  probs.at4(0, 0, 0, 1) = 0.4f;
  probs.at4(0, 1, 0, 1) = 0.2f;
  probs.at4(0, 2, 0, 1) = 0.4f;
  LabelMap pred = argmax_channels(probs);
  CHECK(pred.at(0, 0, 0) == 2);
  CHECK(pred.at(0, 0, 1) == 0);
}

TEST_CASE("evaluate: perfect predictions give miou and pixel accuracy of one") {
  // Metric-level check through the public entry point: evaluate a net whose
  // prediction we overwrite is overkill, so check the metric path directly
  // with a sample evaluated against itself via accumulate/finalize instead.
  LabelMap labels(1, 8, 8);
  for (std::size_t i = 0; i < labels.data.size(); ++i)
    labels.data[i] = static_cast<std::int32_t>(i % 4);
  std::vector<std::int64_t> conf(16, 0);
  accumulate_confusion(conf, 4, labels, labels);
  MetricReport r = metrics_from_confusion(std::move(conf), 4);
  CHECK(r.miou == 1.0);
  CHECK(r.pixel_acc == 1.0);
}

TEST_CASE("evaluate: single-scale path equals a direct forward argmax exactly") {
  SyntheticSceneSpec spec = default_scene_spec();
  spec.seed = 60;
  const auto corpus = generate_corpus(spec, 2);
  auto net = tiny_net(spec.num_classes, 61);

  MetricReport via_eval = evaluate(*net, corpus, /*multi_scale=*/false, /*flip=*/false);

  std::vector<std::int64_t> conf(
      static_cast<std::size_t>(spec.num_classes) * spec.num_classes, 0);
  for (const auto& sample : corpus) {
    NoGradGuard ng;
    Tensor img = sample.image;
    img.shape = {1, 3, sample.height(), sample.width()};
    auto [logits, aux] = net->forward(constant(std::move(img)), Mode::Eval, false);
    (void)aux;
    LabelMap pred = argmax_channels(softmax_channels(logits->value));
    accumulate_confusion(conf, spec.num_classes, sample.labels, pred);
  }
  MetricReport direct = metrics_from_confusion(std::move(conf), spec.num_classes);
  CHECK(via_eval.confusion == direct.confusion);
  CHECK(via_eval.miou == direct.miou);
  CHECK(via_eval.pixel_acc == direct.pixel_acc);
}

TEST_CASE("evaluate: flip averaging is a no-op when the probability map is symmetric") {
  // A zero image drives every feature map to zero, so the logits collapse to
  // the prediction bias: spatially constant, hence mirror-symmetric, and the
  // flipped pass contributes an identical map. Averaging changes nothing.
  SegmentationSample sample;
  sample.image = Tensor({3, 32, 32}, 0.0f);
  sample.labels = LabelMap(1, 32, 32, 0);
  auto net = tiny_net(3, 63);
  Tensor p_plain = predict_probs(*net, sample, {1.0}, false);
  Tensor p_flip = predict_probs(*net, sample, {1.0}, true);
  CHECK(p_plain.data == p_flip.data);
}

TEST_CASE("evaluate: flip pass follows the mirror-forward-mirror-back formula exactly") {
  SyntheticSceneSpec spec = default_scene_spec();
  spec.seed = 62;
  spec.canvas = 32;
  SegmentationSample sample = generate_scene(spec);
  auto net = tiny_net(spec.num_classes, 63);

  Tensor p_flip = predict_probs(*net, sample, {1.0}, true);

  NoGradGuard ng;
  Tensor img = sample.image;
  img.shape = {1, 3, 32, 32};
  auto fwd = [&](Tensor t) {
    auto [logits, aux] = net->forward(constant(std::move(t)), Mode::Eval, false);
    (void)aux;
    return softmax_channels(logits->value);
  };
  Tensor direct = fwd(img);
  Tensor mirrored = hflip(fwd(hflip(img)));
  REQUIRE(direct.data != mirrored.data);  // the net is not flip-equivariant
  Tensor expect = direct;
  for (std::size_t i = 0; i < expect.data.size(); ++i)
    expect.data[i] = (expect.data[i] + mirrored.data[i]) / 2.0f;
  CHECK(p_flip.data == expect.data);
}

TEST_CASE("evaluate: full multi-scale plus flip runs and lands in range") {
  SyntheticSceneSpec spec = default_scene_spec();
  spec.seed = 64;
  const auto corpus = generate_corpus(spec, 2);
  auto net = tiny_net(spec.num_classes, 65);
  MetricReport single = evaluate(*net, corpus, false, false);
  MetricReport multi = evaluate(*net, corpus, true, true);
  for (const MetricReport* r : {&single, &multi}) {
    CHECK(r->miou >= 0.0);
    CHECK(r->miou <= 1.0);
    CHECK(r->pixel_acc >= 0.0);
    CHECK(r->pixel_acc <= 1.0);
  }
  CHECK(std::isfinite(multi.miou - single.miou));
  // Same non-ignore pixel total regardless of protocol.
  CHECK(single.total() == multi.total());
}

TEST_CASE("evaluate: scales collapsing below the stride are skipped with a guard") {
  SyntheticSceneSpec spec = default_scene_spec();
  spec.canvas = 16;
  spec.seed = 66;
  SegmentationSample sample = generate_scene(spec);
  auto net = tiny_net(spec.num_classes, 67);
  // 16 * 0.1 / 8 rounds to zero bins -> skipped; lone skipped scale throws.
  CHECK_THROWS_WITH_AS(predict_probs(*net, sample, {0.1}, false),
                       doctest::Contains("skipped"), ConfigError);
  // A surviving companion scale keeps the call alive.
  Tensor p = predict_probs(*net, sample, {0.1, 1.0}, false);
  CHECK(p.shape == std::vector<int>{1, spec.num_classes, 16, 16});
}
