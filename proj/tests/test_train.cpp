#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "spnet/train.hpp"

using namespace spnet;

namespace {

BackboneSpec tiny_backbone() {
  BackboneSpec b;
  b.stage_widths = {8, 16, 24, 32};
  b.blocks_per_stage = {1, 1, 1, 1};
  b.dilation_per_stage = {1, 1, 2, 4};
  b.stem_width = 8;
  return b;
}

HeadSpec tiny_head(int classes) {
  HeadSpec h;
  h.neck_width = 16;
  h.mpm_count = 1;
  h.num_classes = classes;
  return h;
}

}  // namespace

TEST_CASE("poly_lr: closed form and bounds") {
  TrainConfig cfg;
  cfg.base_lr = 0.004;
  cfg.power = 0.9;
  cfg.max_iter = 100;
  CHECK(poly_lr(0, cfg) == 0.004);  // (1-0)^p == 1 exactly
  TrainConfig linear = cfg;
  linear.power = 1.0;
  CHECK(poly_lr(50, linear) == doctest::Approx(0.002).epsilon(1e-12));
  CHECK(poly_lr(75, cfg) == doctest::Approx(0.004 * std::pow(0.25, 0.9)).epsilon(1e-12));
  CHECK_THROWS_AS(poly_lr(100, cfg), ConfigError);
  CHECK_THROWS_AS(poly_lr(-1, cfg), ConfigError);
  double prev = poly_lr(0, cfg);
  for (int i = 1; i < 100; ++i) {
    const double cur = poly_lr(i, cfg);
    CHECK(cur < prev);
    prev = cur;
  }
}

TEST_CASE("ce: uniform logits score ln K") {
  Tensor logits({2, 5, 3, 3}, 0.7f);  // identical values in every channel
  LabelMap labels(2, 3, 3);
  for (std::size_t i = 0; i < labels.data.size(); ++i)
    labels.data[i] = static_cast<std::int32_t>(i % 5);
  Var loss = softmax_ce(leaf(std::move(logits), false), labels);
  CHECK(std::abs(loss->value.data[0] - std::log(5.0f)) < 1e-6f);
}

TEST_CASE("ce: one-hot logits with margin 20 drive the loss under 1e-6") {
  Tensor logits({1, 4, 2, 2}, 0.0f);
  LabelMap labels(1, 2, 2);
  for (int h = 0; h < 2; ++h)
    for (int w = 0; w < 2; ++w) {
      const int t = (h * 2 + w) % 4;
      labels.at(0, h, w) = t;
      logits.at4(0, t, h, w) = 20.0f;
    }
  Var loss = softmax_ce(leaf(std::move(logits), false), labels);
  CHECK(loss->value.data[0] >= 0.0f);
  CHECK(loss->value.data[0] < 1e-6f);
}

TEST_CASE("ce: random case matches a log-sum-exp hand oracle and finite differences") {
  Rng rng(40);
  const int N = 1, K = 3, H = 4, W = 4;
  Tensor logits = oracle::random_tensor({N, K, H, W}, rng, -2.0f, 2.0f);
  LabelMap labels(N, H, W);
  for (int h = 0; h < H; ++h)
    for (int w = 0; w < W; ++w)
      labels.at(0, h, w) = (h == 0 && w == 0) ? kIgnoreLabel : rng.uniform_int(K);

  // Hand oracle: plain exponentials, no max shift, reversed channel order.
  double acc = 0.0;
  int m = 0;
  for (int h = 0; h < H; ++h)
    for (int w = 0; w < W; ++w) {
      const std::int32_t t = labels.at(0, h, w);
      if (t == kIgnoreLabel) continue;
      double denom = 0.0;
      for (int k = K - 1; k >= 0; --k) denom += std::exp(static_cast<double>(logits.at4(0, k, h, w)));
      acc += std::log(denom) - static_cast<double>(logits.at4(0, t, h, w));
      ++m;
    }
  const double expect = acc / m;

  Var x = leaf(std::move(logits), true);
  Var loss = softmax_ce(x, labels);
  CHECK(std::abs(static_cast<double>(loss->value.data[0]) - expect) < 1e-5);
  CHECK(loss->value.data[0] >= 0.0f);

  backward(loss);
  // Central finite differences through the float forward.
  const float eps = 3e-3f;
  for (std::size_t i = 0; i < x->value.data.size(); ++i) {
    const float keep = x->value.data[i];
    x->value.data[i] = keep + eps;
    const float up = softmax_ce(x, labels)->value.data[0];
    x->value.data[i] = keep - eps;
    const float dn = softmax_ce(x, labels)->value.data[0];
    x->value.data[i] = keep;
    const float fd = (up - dn) / (2 * eps);
    const float an = x->grad.data[i];
    if (std::abs(an) > 1e-3f)
      CHECK(std::abs(fd - an) / std::abs(an) < 1e-2f);
    else
      CHECK(std::abs(fd - an) < 1e-3f);
  }
}

TEST_CASE("ce: gradient is zero at ignore-labeled pixels") {
  Rng rng(41);
  Tensor logits = oracle::random_tensor({1, 3, 2, 2}, rng);
  LabelMap labels(1, 2, 2, 0);
  labels.at(0, 1, 1) = kIgnoreLabel;
  Var x = leaf(std::move(logits), true);
  backward(softmax_ce(x, labels));
  for (int k = 0; k < 3; ++k) CHECK(x->grad.at4(0, k, 1, 1) == 0.0f);
}

TEST_CASE("ce: all-ignore label map is rejected") {
  Tensor logits({1, 2, 2, 2}, 0.0f);
  LabelMap labels(1, 2, 2, kIgnoreLabel);
  CHECK_THROWS_WITH_AS(softmax_ce(leaf(std::move(logits), false), labels),
                       doctest::Contains("ignore"), ConfigError);
}

TEST_CASE("ce_loss: total combines main and weighted aux") {
  Rng rng(42);
  Tensor main_l = oracle::random_tensor({1, 3, 2, 2}, rng);
  Tensor aux_l = oracle::random_tensor({1, 3, 2, 2}, rng);
  LabelMap labels(1, 2, 2);
  for (std::size_t i = 0; i < labels.data.size(); ++i)
    labels.data[i] = static_cast<std::int32_t>(i % 3);
  CeLoss loss = ce_loss(leaf(std::move(main_l), false), leaf(std::move(aux_l), false), labels,
                        0.4);
  CHECK(loss.total->value.data[0] ==
        doctest::Approx(loss.main->value.data[0] + 0.4f * loss.aux->value.data[0])
            .epsilon(1e-6));
}

TEST_CASE("augment: deterministic given the stream and shaped to the crop") {
  SyntheticSceneSpec spec = default_scene_spec();
  spec.seed = 3;
  SegmentationSample sample = generate_scene(spec);
  TrainConfig cfg;
  cfg.crop = 32;
  Rng a(77), b(77);
  SegmentationSample x = augment_sample(sample, cfg, a);
  SegmentationSample y = augment_sample(sample, cfg, b);
  CHECK(x.image.shape == std::vector<int>{3, 32, 32});
  CHECK(x.labels.h == 32);
  CHECK(x.labels.w == 32);
  CHECK(x.image.data == y.image.data);
  CHECK(x.labels.data == y.labels.data);
  for (std::int32_t l : x.labels.data)
    CHECK((l == kIgnoreLabel || (l >= 0 && l < spec.num_classes)));
}

TEST_CASE("augment: downscale smaller than the crop pads with zero / ignore") {
  SyntheticSceneSpec spec = default_scene_spec();
  spec.canvas = 32;
  spec.seed = 4;
  SegmentationSample sample = generate_scene(spec);
  TrainConfig cfg;
  cfg.crop = 32;
  cfg.scale_min = 0.5;
  cfg.scale_max = 0.5;  // 16x16 content inside a 32x32 crop
  Rng rng(5);
  SegmentationSample out = augment_sample(sample, cfg, rng);
  int ignored = 0;
  for (std::int32_t l : out.labels.data) ignored += (l == kIgnoreLabel) ? 1 : 0;
  CHECK(ignored == 32 * 32 - 16 * 16);
  // Padded image pixels are exactly zero.
  int zeros = 0;
  for (float v : out.image.data) zeros += (v == 0.0f) ? 1 : 0;
  CHECK(zeros >= 3 * (32 * 32 - 16 * 16));
}

TEST_CASE("train config: invalid fields are rejected by name") {
  TrainConfig cfg;
  cfg.crop = 30;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("train.crop"), ConfigError);
  cfg = TrainConfig{};
  cfg.scale_max = 2.5;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("scale"), ConfigError);
  cfg = TrainConfig{};
  cfg.power = 0.0;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("train.power"), ConfigError);
  cfg = TrainConfig{};
  cfg.aux_weight = -0.1;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("train.aux_weight"), ConfigError);
}

TEST_CASE("train: short run records the schedule and repeats bit-identically") {
  SyntheticSceneSpec spec = default_scene_spec();
  spec.canvas = 32;
  spec.seed = 11;
  const auto corpus = generate_corpus(spec, 4);

  TrainConfig cfg;
  cfg.max_iter = 6;
  cfg.batch_size = 2;
  cfg.crop = 32;
  cfg.base_lr = 0.01;
  cfg.seed = 21;

  auto run = [&]() {
    auto net = build_spnet(tiny_backbone(), SpmPlacement{}, tiny_head(spec.num_classes), 31);
    TrainStats stats = train_network(*net, corpus, cfg);
    ParamMap pm = net->params();
    std::vector<float> first_weights = pm.trainable.front().second->value.data;
    return std::pair{stats, first_weights};
  };
  auto [s1, w1] = run();
  auto [s2, w2] = run();

  REQUIRE(s1.rows.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(s1.rows[i].iter == static_cast<int>(i));
    CHECK(s1.rows[i].lr == poly_lr(static_cast<int>(i), cfg));
    CHECK(std::isfinite(s1.rows[i].main_loss));
    CHECK(std::isfinite(s1.rows[i].aux_loss));
    CHECK(s1.rows[i].main_loss == s2.rows[i].main_loss);
    CHECK(s1.rows[i].aux_loss == s2.rows[i].aux_loss);
  }
  CHECK(w1 == w2);
}
