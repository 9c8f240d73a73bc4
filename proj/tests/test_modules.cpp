#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "spnet/modules.hpp"

using namespace spnet;

namespace {

Var leaf_from(const Tensor& t, bool rg = true) {
  Tensor copy = t;
  return leaf(std::move(copy), rg);
}

void zero_conv_weights(ParamMap& pm) {
  for (auto& [name, v] : pm.trainable)
    if (name.find("weight") != std::string::npos)
      std::fill(v->value.data.begin(), v->value.data.end(), 0.0f);
}

}  // namespace

// ---- SPM ---------------------------------------------------------------------

TEST_CASE("spm: zero conv weights gate everything by exactly one half") {
  Rng rng(101);
  Spm spm(4, GateKind::Strip, rng);
  ParamMap pm;
  spm.collect("spm", pm);
  zero_conv_weights(pm);
  Tensor x = oracle::random_tensor({2, 4, 5, 6}, rng);
  for (Mode mode : {Mode::Train, Mode::Eval}) {
    Var y = spm.forward(leaf_from(x), mode);
    for (std::size_t i = 0; i < x.data.size(); ++i)
      CHECK(y->value.data[i] == 0.5f * x.data[i]);
  }
}

TEST_CASE("spm: gate lies strictly inside (0,1) so outputs attenuate") {
  Rng rng(102);
  Spm spm(3, GateKind::Strip, rng);
  Tensor x = oracle::random_tensor({1, 3, 6, 7}, rng);
  BranchTrace trace;
  Var y = spm.forward(leaf_from(x), Mode::Eval, &trace);
  CHECK(y->value.shape == x.shape);
  GateStats gs = spm.last_gate();
  CHECK(gs.min > 0.0f);
  CHECK(gs.max < 1.0f);
  CHECK(gs.mean > gs.min);
  CHECK(gs.mean < gs.max);
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    CHECK(std::abs(y->value.data[i]) <= std::abs(x.data[i]));
    if (x.data[i] != 0.0f) {
      const float ratio = y->value.data[i] / x.data[i];
      CHECK(ratio > 0.0f);
      CHECK(ratio < 1.0f);
    }
  }
}

TEST_CASE("spm: constant input reproduces oracle-composed internal profiles") {
  Rng rng(103);
  const int C = 3, H = 5, W = 7;
  Spm spm(C, GateKind::Strip, rng);
  ParamMap pm;
  spm.collect("spm", pm);
  Tensor conv_h_w, conv_v_w;
  for (auto& [name, v] : pm.trainable) {
    if (name == "spm.conv_h.weight") conv_h_w = v->value;
    if (name == "spm.conv_v.weight") conv_v_w = v->value;
  }
  Tensor x({1, C, H, W});
  for (int c = 0; c < C; ++c)
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w) x.at4(0, c, h, w) = 0.2f + 0.3f * static_cast<float>(c);

  BranchTrace trace;
  spm.forward(leaf_from(x), Mode::Eval, &trace);

  // Oracle: strip pools -> direct 1-D conv -> init-state eval batchnorm -> relu.
  const float bn_scale = 1.0f / std::sqrt(1.0f + 1e-5f);
  Tensor ph = oracle::strip_pool_h(x);  // [1,C,H,1]
  Tensor ph_seq({1, C, H});
  for (int c = 0; c < C; ++c)
    for (int h = 0; h < H; ++h) ph_seq.data[c * H + h] = ph.at4(0, c, h, 0);
  Tensor yh = oracle::conv1d(ph_seq, conv_h_w, nullptr, 1);
  for (int c = 0; c < C; ++c)
    for (int h = 0; h < H; ++h) {
      const float expect = std::max(0.0f, yh.data[c * H + h] * bn_scale);
      CHECK(std::abs(trace.profile_h.at4(0, c, h, 0) - expect) < 1e-5f);
    }
  Tensor pv = oracle::strip_pool_v(x);
  Tensor pv_seq({1, C, W});
  for (int c = 0; c < C; ++c)
    for (int w = 0; w < W; ++w) pv_seq.data[c * W + w] = pv.at4(0, c, 0, w);
  Tensor yv = oracle::conv1d(pv_seq, conv_v_w, nullptr, 1);
  for (int c = 0; c < C; ++c)
    for (int w = 0; w < W; ++w) {
      const float expect = std::max(0.0f, yv.data[c * W + w] * bn_scale);
      CHECK(std::abs(trace.profile_v.at4(0, c, 0, w) - expect) < 1e-5f);
    }
}

TEST_CASE("spm: gate sensitivity spans the perturbed pixel's full row and column") {
  Rng rng(104);
  const int C = 2, H = 6, W = 7, i0 = 3, j0 = 2;
  Spm spm(C, GateKind::Strip, rng);
  // Pin the 1-D convs to a center-tap identity so the profile paths stay in
  // the active relu region for positive inputs; the fuse conv stays random.
  ParamMap pm;
  spm.collect("spm", pm);
  for (auto& [name, v] : pm.trainable)
    if (name == "spm.conv_h.weight" || name == "spm.conv_v.weight") {
      std::fill(v->value.data.begin(), v->value.data.end(), 0.0f);
      for (int c = 0; c < C; ++c)
        v->value.data[(static_cast<std::size_t>(c) * C + c) * 3 + 1] = 1.0f;
    }
  Tensor x = oracle::random_tensor({1, C, H, W}, rng, 0.2f, 1.0f);
  BranchTrace base, bumped;
  spm.forward(leaf_from(x), Mode::Eval, &base);
  Tensor x2 = x;
  x2.at4(0, 0, i0, j0) += 0.5f;
  spm.forward(leaf_from(x2), Mode::Eval, &bumped);
  for (int c = 0; c < C; ++c) {
    for (int j = 0; j < W; ++j)
      CHECK(std::abs(bumped.gate.at4(0, c, i0, j) - base.gate.at4(0, c, i0, j)) > 1e-7f);
    for (int i = 0; i < H; ++i)
      CHECK(std::abs(bumped.gate.at4(0, c, i, j0) - base.gate.at4(0, c, i, j0)) > 1e-7f);
  }
  // With center-tap profile convs the influence is exactly the cross: every
  // position off the perturbed row and column is bit-identical.
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j) {
        if (i == i0 || j == j0) continue;
        CHECK(bumped.gate.at4(0, c, i, j) == base.gate.at4(0, c, i, j));
      }
}

TEST_CASE("spm: column translation shifts the vertical profile") {
  Rng rng(105);
  const int W = 10, shift = 2;
  Spm spm(2, GateKind::Strip, rng);
  Tensor x = oracle::random_tensor({1, 2, 4, W}, rng);
  Tensor xs({1, 2, 4, W});
  for (int c = 0; c < 2; ++c)
    for (int h = 0; h < 4; ++h)
      for (int w = 0; w < W; ++w)
        xs.at4(0, c, h, w) = x.at4(0, c, h, (w + shift) % W);
  BranchTrace a, b;
  spm.forward(leaf_from(x), Mode::Eval, &a);
  spm.forward(leaf_from(xs), Mode::Eval, &b);
  // Interior positions whose conv taps avoid both sequence ends and the wrap.
  for (int c = 0; c < 2; ++c)
    for (int w = 1; w + 1 < W - shift; ++w)
      CHECK(b.profile_v.at4(0, c, 0, w) ==
            doctest::Approx(a.profile_v.at4(0, c, 0, w + shift)).epsilon(1e-5));
}

// ---- SE-style gate -----------------------------------------------------------

TEST_CASE("se gate: zero conv weights give one-half gating") {
  Rng rng(111);
  Spm gate(4, GateKind::Global, rng);
  ParamMap pm;
  gate.collect("se", pm);
  zero_conv_weights(pm);
  Tensor x = oracle::random_tensor({2, 4, 3, 5}, rng);
  Var y = gate.forward(leaf_from(x), Mode::Eval);
  for (std::size_t i = 0; i < x.data.size(); ++i) CHECK(y->value.data[i] == 0.5f * x.data[i]);
}

TEST_CASE("se gate: gate is spatially constant per channel") {
  Rng rng(112);
  Spm gate(3, GateKind::Global, rng);
  Tensor x = oracle::random_tensor({1, 3, 4, 6}, rng);
  BranchTrace trace;
  gate.forward(leaf_from(x), Mode::Eval, &trace);
  CHECK(trace.gate.shape == std::vector<int>{1, 3, 1, 1});
}

TEST_CASE("se gate equals spm on spatially constant input with center-tap weights") {
  Rng rng(113);
  const int C = 3;
  Spm spm(C, GateKind::Strip, rng);
  Rng rng2(113);  // identical parameter draws
  Spm se(C, GateKind::Global, rng2);
  // Restrict both 1-D convs to their center tap so border effects vanish,
  // and copy the same values into both modules.
  ParamMap pm_spm, pm_se;
  spm.collect("m", pm_spm);
  se.collect("m", pm_se);
  Rng wrng(7);
  for (std::size_t k = 0; k < pm_spm.trainable.size(); ++k) {
    auto& [name, v] = pm_spm.trainable[k];
    auto& v2 = pm_se.trainable[k].second;
    REQUIRE(pm_se.trainable[k].first == name);
    if (name == "m.conv_h.weight" || name == "m.conv_v.weight") {
      std::fill(v->value.data.begin(), v->value.data.end(), 0.0f);
      for (int co = 0; co < C; ++co)
        for (int ci = 0; ci < C; ++ci)
          v->value.data[(static_cast<std::size_t>(co) * C + ci) * 3 + 1] =
              wrng.uniform(-0.5f, 0.5f);
    }
    v2->value = v->value;
  }
  Tensor x({2, C, 5, 7});
  Rng xr(3);
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < C; ++c) {
      const float v = xr.uniform(0.2f, 0.9f);
      for (int h = 0; h < 5; ++h)
        for (int w = 0; w < 7; ++w) x.at4(n, c, h, w) = v;
    }
  Var a = spm.forward(leaf_from(x), Mode::Eval);
  Var b = se.forward(leaf_from(x), Mode::Eval);
  for (std::size_t i = 0; i < a->value.data.size(); ++i)
    CHECK(a->value.data[i] == doctest::Approx(b->value.data[i]).epsilon(1e-5));
}

// ---- LRD ---------------------------------------------------------------------

TEST_CASE("lrd: zero input maps to zero output") {
  Rng rng(121);
  Lrd lrd(3, rng);
  for (Mode mode : {Mode::Train, Mode::Eval}) {
    Var y = lrd.forward(leaf(Tensor({2, 3, 4, 5}, 0.0f)), mode);
    for (float v : y->value.data) CHECK(v == 0.0f);
  }
}

TEST_CASE("lrd: prefusion equals broadcast reconstruction of the two profiles") {
  Rng rng(122);
  Lrd lrd(4, rng);
  Tensor x = oracle::random_tensor({1, 4, 5, 6}, rng);
  BranchTrace trace;
  lrd.forward(leaf_from(x), Mode::Eval, &trace);
  for (int c = 0; c < 4; ++c)
    for (int h = 0; h < 5; ++h)
      for (int w = 0; w < 6; ++w) {
        const float expect =
            trace.profile_h.at4(0, c, h, 0) + trace.profile_v.at4(0, c, 0, w);
        CHECK(std::abs(trace.prefusion.at4(0, c, h, w) - expect) < 1e-5f);
      }
}

TEST_CASE("lrd: a bright row raises its whole output row uniformly before fusion") {
  Rng rng(123);
  const int r = 2;
  Lrd lrd(2, rng);
  Tensor x({1, 2, 5, 6}, 0.0f);
  for (int w = 0; w < 6; ++w) x.at4(0, 0, r, w) = 1.0f;
  BranchTrace trace;
  lrd.forward(leaf_from(x), Mode::Eval, &trace);
  // The horizontal-path contribution is constant along every row, so the
  // prefusion difference between two columns is column-dependent only.
  for (int c = 0; c < 2; ++c)
    for (int w = 0; w < 6; ++w) {
      const float diff = trace.prefusion.at4(0, c, r, w) - trace.profile_v.at4(0, c, 0, w);
      CHECK(diff == doctest::Approx(trace.profile_h.at4(0, c, r, 0)).epsilon(1e-6));
    }
}

// ---- SRD ---------------------------------------------------------------------

TEST_CASE("srd: unit spatial extent reduces to a sum of three conv paths") {
  Rng rng(131);
  Srd srd(4, {kSrdBinsA, kSrdBinsA}, {kSrdBinsB, kSrdBinsB}, rng);
  Tensor x = oracle::random_tensor({2, 4, 1, 1}, rng);
  BranchTrace trace;
  Var y = srd.forward(leaf_from(x), Mode::Eval, &trace);
  CHECK(y->value.shape == x.shape);
  for (std::size_t i = 0; i < trace.prefusion.data.size(); ++i) {
    const float sum = trace.path_a.data[i] + trace.path_b.data[i] +
                      (trace.prefusion.data[i] - trace.path_a.data[i] - trace.path_b.data[i]);
    CHECK(trace.prefusion.data[i] == doctest::Approx(sum).epsilon(1e-6));
  }
}

TEST_CASE("srd: constant input with shared weights makes the pyramid paths equal") {
  Rng rng(132);
  Srd srd(3, {kSrdBinsA, kSrdBinsA}, {kSrdBinsB, kSrdBinsB}, rng);
  ParamMap pm;
  srd.collect("srd", pm);
  // Copy path_a's conv weight into path_b so the two paths share parameters.
  Var wa, wb;
  for (auto& [name, v] : pm.trainable) {
    if (name == "srd.path_a.conv.weight") wa = v;
    if (name == "srd.path_b.conv.weight") wb = v;
  }
  wb->value = wa->value;
  // 8 <= both bin limits, so the clamped grids coincide and pooling is exact.
  Tensor x({1, 3, 8, 8}, 0.6f);
  BranchTrace trace;
  srd.forward(leaf_from(x), Mode::Eval, &trace);
  for (std::size_t i = 0; i < trace.path_a.data.size(); ++i)
    CHECK(trace.path_a.data[i] == trace.path_b.data[i]);
}

TEST_CASE("srd: pyramid paths match the composed pooling/conv/upsample oracles") {
  Rng rng(133);
  const int B = 2, H = 24, W = 24;
  Srd srd(B, {kSrdBinsA, kSrdBinsA}, {kSrdBinsB, kSrdBinsB}, rng);
  ParamMap pm;
  srd.collect("srd", pm);
  Tensor wa, wb;
  for (auto& [name, v] : pm.trainable) {
    if (name == "srd.path_a.conv.weight") wa = v->value;
    if (name == "srd.path_b.conv.weight") wb = v->value;
  }
  Tensor x = oracle::random_tensor({1, B, H, W}, rng);
  BranchTrace trace;
  srd.forward(leaf_from(x), Mode::Eval, &trace);

  const float bn_scale = 1.0f / std::sqrt(1.0f + 1e-5f);
  auto oracle_path = [&](const Tensor& w, int bins, const Tensor& got) {
    Tensor pooled = oracle::adaptive_avg_pool2d(x, std::min(bins, H), std::min(bins, W));
    Tensor conv = oracle::conv2d(pooled, w, nullptr, 1, 1, 1);
    for (float& v : conv.data) v = std::max(0.0f, v * bn_scale);
    Tensor up = bilinear_resize(conv, H, W);
    CHECK(oracle::max_abs_diff(up, got) < 1e-4f);
  };
  oracle_path(wa, kSrdBinsA, trace.path_a);
  oracle_path(wb, kSrdBinsB, trace.path_b);
}

// ---- MPM ---------------------------------------------------------------------

TEST_CASE("mpm: zero expansion weights make it the exact identity") {
  Rng rng(141);
  Mpm mpm(8, MpmBranches::Both, rng);
  std::fill(mpm.expand().weight->value.data.begin(), mpm.expand().weight->value.data.end(),
            0.0f);
  Tensor x = oracle::random_tensor({2, 8, 6, 5}, rng);
  for (Mode mode : {Mode::Train, Mode::Eval}) {
    Var y = mpm.forward(leaf_from(x), mode);
    for (std::size_t i = 0; i < x.data.size(); ++i) CHECK(y->value.data[i] == x.data[i]);
  }
}

TEST_CASE("mpm: output shape equals input shape including rectangular maps") {
  Rng rng(142);
  Mpm mpm(8, MpmBranches::Both, rng);
  for (auto [h, w] : {std::pair{4, 4}, std::pair{6, 10}, std::pair{9, 5}, std::pair{25, 13}}) {
    Tensor x = oracle::random_tensor({1, 8, h, w}, rng);
    Var y = mpm.forward(leaf_from(x), Mode::Eval);
    CHECK(y->value.shape == x.shape);
    CHECK(y->value.all_finite());
  }
}

TEST_CASE("mpm: single-branch variants run and differ from both-branch") {
  Rng rng(143);
  Mpm both(8, MpmBranches::Both, rng);
  Rng rng2(143);
  Mpm srd_only(8, MpmBranches::SrdOnly, rng2);
  Rng rng3(143);
  Mpm lrd_only(8, MpmBranches::LrdOnly, rng3);
  Tensor x = oracle::random_tensor({1, 8, 6, 6}, rng);
  Var yb = both.forward(leaf_from(x), Mode::Eval);
  Var ys = srd_only.forward(leaf_from(x), Mode::Eval);
  Var yl = lrd_only.forward(leaf_from(x), Mode::Eval);
  CHECK(yb->value.shape == x.shape);
  CHECK(ys->value.shape == x.shape);
  CHECK(yl->value.shape == x.shape);
  CHECK(oracle::max_abs_diff(ys->value, yl->value) > 1e-6f);
}

TEST_CASE("mpm: indivisible channel count rejected at build time") {
  Rng rng(144);
  CHECK_THROWS_AS(Mpm(10, MpmBranches::Both, rng), ConfigError);
}

TEST_CASE("mpm: backward produces finite grads for every parameter") {
  Rng rng(145);
  Mpm mpm(8, MpmBranches::Both, rng);
  Tensor x = oracle::random_tensor({2, 8, 6, 6}, rng);
  Var loss = sum_all(mpm.forward(leaf_from(x), Mode::Train));
  backward(loss);
  ParamMap pm;
  mpm.collect("mpm", pm);
  int with_grad = 0;
  for (auto& [name, v] : pm.trainable) {
    REQUIRE(v->grad.data.size() == v->value.data.size());
    CHECK(v->grad.all_finite());
    for (float g : v->grad.data)
      if (g != 0.0f) {
        ++with_grad;
        break;
      }
  }
  CHECK(with_grad > 10);
}

// ---- parameter counting ------------------------------------------------------

TEST_CASE("param_count: a biased 1x1 conv from 4 to 8 channels counts 40") {
  Rng rng(151);
  Conv2d conv(4, 8, 1, 1, 0, 1, /*with_bias=*/true, rng);
  ParamMap pm;
  conv.collect("conv", pm);
  CHECK(param_count(pm) == 40);
}

TEST_CASE("param_count: one mpm at 1024 channels lands on 4.4M within 5%") {
  Rng rng(152);
  Mpm mpm(1024, MpmBranches::Both, rng);
  ParamMap pm;
  mpm.collect("mpm", pm);
  const double count = static_cast<double>(param_count(pm));
  CHECK(count == 4397568.0);  // frozen: 2*262656 + 2361344 + 984576 + 526336
  CHECK(count > 4.4e6 * 0.95);
  CHECK(count < 4.4e6 * 1.05);
}

TEST_CASE("param_count: two mpms at 1024 channels land on 8.8M within 5%") {
  Rng rng(153);
  Mpm a(1024, MpmBranches::Both, rng);
  Mpm b(1024, MpmBranches::Both, rng);
  ParamMap pm;
  a.collect("mpm0", pm);
  b.collect("mpm1", pm);
  const double count = static_cast<double>(param_count(pm));
  CHECK(count > 8.8e6 * 0.95);
  CHECK(count < 8.8e6 * 1.05);
}
