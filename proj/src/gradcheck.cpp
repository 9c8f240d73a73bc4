#include "spnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <set>
#include <utility>

#include "spnet/modules.hpp"
#include "spnet/pooling.hpp"
#include "spnet/rng.hpp"
#include "spnet/train.hpp"

namespace spnet {
namespace {

// One randomized problem instance: named differentiable leaves plus a closure
// rebuilding the graph from the leaves' current values. The harness forms a
// scalar loss (sum of outputs), compares analytic leaf gradients against
// central finite differences of the loss, and only judges entries whose
// analytic magnitude clears the floor.
struct GradCase {
  std::vector<std::pair<std::string, Var>> leaves;
  std::function<Var()> forward;
};

struct OpEntry {
  const char* name;
  // FD step. The default suits well-conditioned primitives; ops whose
  // perturbations touch many float32 outputs (convolutions, the composite
  // modules) use a larger step to keep rounding noise below tolerance.
  double step;
  std::function<GradCase(Rng&, int)> make;
};

/// Magnitudes drawn from [lo, hi]; mixed_sign flips each entry's sign with
/// probability 1/2. Keeping magnitudes bounded away from zero keeps gradient
/// entries either above the check floor or exactly zero.
Var rand_leaf(const std::vector<int>& shape, Rng& rng, float lo, float hi,
              bool mixed_sign) {
  Tensor t(shape);
  for (float& v : t.data) {
    v = rng.uniform(lo, hi);
    if (mixed_sign && rng.bernoulli(0.5)) v = -v;
  }
  return leaf(std::move(t), true);
}

GradCase unary_case(Rng& rng, const std::vector<int>& shape, float lo, float hi,
                    bool mixed, std::function<Var(const Var&)> fn) {
  GradCase c;
  Var x = rand_leaf(shape, rng, lo, hi, mixed);
  c.leaves.emplace_back("x", x);
  c.forward = [x, fn = std::move(fn)]() { return fn(x); };
  return c;
}

GradCase binary_case(Rng& rng, const std::vector<int>& sa, const std::vector<int>& sb,
                     std::function<Var(const Var&, const Var&)> fn, bool mixed = true) {
  GradCase c;
  Var a = rand_leaf(sa, rng, 0.5f, 1.5f, mixed);
  Var b = rand_leaf(sb, rng, 0.5f, 1.5f, mixed);
  c.leaves.emplace_back("a", a);
  c.leaves.emplace_back("b", b);
  c.forward = [a, b, fn = std::move(fn)]() { return fn(a, b); };
  return c;
}

/// Broadcast shape pairs exercised by add/mul: same-shape, strip x strip,
/// full x row-profile, full x column-profile.
std::pair<std::vector<int>, std::vector<int>> broadcast_shapes(int variant) {
  switch (variant % 4) {
    case 0: return {{2, 3, 4, 5}, {2, 3, 4, 5}};
    case 1: return {{1, 3, 4, 1}, {1, 3, 1, 5}};
    case 2: return {{1, 3, 4, 5}, {1, 3, 4, 1}};
    default: return {{1, 3, 4, 5}, {1, 3, 1, 5}};
  }
}

GradCase conv2d_case(Rng& rng, int trial) {
  GradCase c;
  Var x = rand_leaf({1, 2, 6, 7}, rng, 0.3f, 1.0f, false);
  Var w = rand_leaf({3, 2, 3, 3}, rng, 0.2f, 0.8f, false);
  c.leaves.emplace_back("x", x);
  c.leaves.emplace_back("w", w);
  int stride = 1, padding = 1, dilation = 1;
  if (trial % 3 == 1) stride = 2;
  if (trial % 3 == 2) {
    padding = 2;
    dilation = 2;
  }
  Var bias;
  if (trial % 2 == 0) {
    bias = rand_leaf({3}, rng, 0.1f, 0.4f, true);
    c.leaves.emplace_back("bias", bias);
  }
  c.forward = [x, w, bias, stride, padding, dilation]() {
    return conv2d(x, w, bias, stride, padding, dilation);
  };
  return c;
}

GradCase conv2d_hw_case(Rng& rng, int trial) {
  GradCase c;
  Var x = rand_leaf({1, 2, 5, 8}, rng, 0.3f, 1.0f, false);
  const bool horizontal = trial % 2 == 0;
  Var w = rand_leaf(horizontal ? std::vector<int>{2, 2, 1, 3} : std::vector<int>{2, 2, 3, 1},
                    rng, 0.2f, 0.8f, false);
  c.leaves.emplace_back("x", x);
  c.leaves.emplace_back("w", w);
  const int pad_h = horizontal ? 0 : 1;
  const int pad_w = horizontal ? 1 : 0;
  c.forward = [x, w, pad_h, pad_w]() {
    return conv2d_hw(x, w, Var{}, 1, pad_h, pad_w, 1);
  };
  return c;
}

GradCase conv1d_case(Rng& rng, int trial) {
  GradCase c;
  Var x = rand_leaf({2, 3, 9}, rng, 0.3f, 1.0f, false);
  Var w = rand_leaf({3, 3, 3}, rng, 0.2f, 0.8f, false);
  c.leaves.emplace_back("x", x);
  c.leaves.emplace_back("w", w);
  Var bias;
  if (trial % 2 == 1) {
    bias = rand_leaf({3}, rng, 0.1f, 0.4f, true);
    c.leaves.emplace_back("bias", bias);
  }
  c.forward = [x, w, bias]() { return conv1d_along(x, w, bias, 1); };
  return c;
}

GradCase batchnorm_case(Rng& rng, int) {
  GradCase c;
  // Train-mode batchnorm couples every value of a channel through the batch
  // statistics: perturbing one input moves all of that channel's outputs, so
  // FD rounding noise accumulates across the channel, while the per-channel
  // zero-sum constraint on the input gradient guarantees entries of every
  // magnitude down to zero. Two measures keep the check clean anyway:
  //  - gamma = 5e-4 scales every rounded output (and hence the FD noise)
  //    down with it, while the |g| > grad-floor retention threshold stays
  //    absolute, so coordinates whose gradient is too weak to measure
  //    against that noise are skipped instead of mismeasured;
  //  - the constant readout weights r are aligned with the sign of each
  //    value's deviation from its channel mean, which bounds the gamma
  //    gradient (sum of r * x_hat, at least half the sum of |x_hat|) away
  //    from zero. A plain sum readout would see a constant loss.
  const int C = 3, H = 2, W = 3;
  Var x = rand_leaf({1, C, H, W}, rng, 0.5f, 2.0f, true);
  Var gamma = leaf(Tensor({C}, 5e-4f), true);
  Var beta = leaf(Tensor({C}), true);
  Tensor r({1, C, H, W});
  for (int ch = 0; ch < C; ++ch) {
    double mean = 0.0;
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j) mean += x->value.at4(0, ch, i, j);
    mean /= H * W;
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j)
        r.at4(0, ch, i, j) = x->value.at4(0, ch, i, j) >= mean ? 2.0f : 1.0f;
  }
  c.leaves.emplace_back("x", x);
  c.leaves.emplace_back("gamma", gamma);
  c.leaves.emplace_back("beta", beta);
  // Shared state across the analytic pass and every FD evaluation; in Train
  // mode the output depends only on batch statistics, so the running-stat
  // updates the repeated forwards perform do not disturb the check.
  auto stats = std::make_shared<BnStats>();
  stats->mean = Tensor({C});
  stats->var = Tensor({C}, 1.0f);
  Var rc = constant(std::move(r));
  c.forward = [x, gamma, beta, stats, rc]() {
    return mul(batchnorm2d(x, gamma, beta, *stats, Mode::Train), rc);
  };
  return c;
}

GradCase softmax_ce_case(Rng& rng, int trial) {
  GradCase c;
  // Small logit maps keep every per-pixel gradient entry well above the
  // rounding noise of the float32 scalar loss.
  const int K = 4, H = 2, W = 2;
  Var logits = rand_leaf({1, K, H, W}, rng, 0.0f, 0.8f, true);
  auto labels = std::make_shared<LabelMap>(1, H, W);
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j) labels->at(0, i, j) = rng.uniform_int(K);
  if (trial % 3 == 0) labels->at(0, 0, 0) = kIgnoreLabel;
  c.leaves.emplace_back("logits", logits);
  c.forward = [logits, labels]() { return softmax_ce(logits, *labels); };
  return c;
}

// The composite entries check the gradient that flows through the whole
// module to its input. Each module parameter's adjoint is covered by the
// registry entry of its primitive op; a parameter-side FD probe inside a
// BN+relu composite would cross relu kinks and measure the wrong slope.
//
// The modules' batchnorm affine parameters are reconditioned before the
// check: with the default gamma=1/beta=0, train-mode normalization centers
// every hidden preactivation on zero, so a large fraction of them sit
// within one FD step of the relu kink and the secant measures the wrong
// slope there. gamma=0.25/beta=1.5 keeps post-BN values inside [~0.75,
// ~2.25], so every relu operates on its active branch and the finite
// difference is clean; the chained backward through the whole module is
// exercised unchanged, and kink handling itself is relu's own entry.
void condition_module_bn(ParamMap& params) {
  for (auto& [name, v] : params.trainable) {
    if (name.size() >= 6 && name.compare(name.size() - 6, 6, ".gamma") == 0)
      std::fill(v->value.data.begin(), v->value.data.end(), 0.25f);
    if (name.size() >= 5 && name.compare(name.size() - 5, 5, ".beta") == 0)
      std::fill(v->value.data.begin(), v->value.data.end(), 1.5f);
  }
}

GradCase spm_case(Rng& rng, int) {
  GradCase c;
  auto spm = std::make_shared<Spm>(2, GateKind::Strip, rng);
  ParamMap params;
  spm->collect("spm", params);
  condition_module_bn(params);
  Var x = rand_leaf({1, 2, 5, 6}, rng, 0.3f, 1.0f, true);
  c.leaves.emplace_back("x", x);
  c.forward = [spm, x]() { return spm->forward(x, Mode::Train); };
  return c;
}

GradCase mpm_case(Rng& rng, int) {
  GradCase c;
  auto mpm = std::make_shared<Mpm>(4, MpmBranches::Both, rng);
  ParamMap params;
  mpm->collect("mpm", params);
  condition_module_bn(params);
  Var x = rand_leaf({1, 4, 6, 6}, rng, 0.3f, 1.0f, true);
  c.leaves.emplace_back("x", x);
  c.forward = [mpm, x]() { return mpm->forward(x, Mode::Train); };
  return c;
}

const std::vector<OpEntry>& registry() {
  static const std::vector<OpEntry> entries = {
      {"add", 1e-3,
       [](Rng& rng, int trial) {
         auto [sa, sb] = broadcast_shapes(trial);
         return binary_case(rng, sa, sb, [](const Var& a, const Var& b) { return add(a, b); });
       }},
      {"mul", 1e-3,
       [](Rng& rng, int trial) {
         auto [sa, sb] = broadcast_shapes(trial);
         // Positive factors: a broadcast leaf's gradient is a sum over the
         // broadcast extent, and with mixed signs that sum can cancel down to
         // the retention floor where FD rounding noise dominates.
         return binary_case(rng, sa, sb,
                            [](const Var& a, const Var& b) { return mul(a, b); },
                            /*mixed=*/false);
       }},
      {"relu", 1e-3,
       [](Rng& rng, int) {
         // magnitudes >= 0.2 keep every coordinate on one side of the kink
         return unary_case(rng, {2, 3, 5, 6}, 0.2f, 1.2f, true,
                           [](const Var& x) { return relu(x); });
       }},
      {"sigmoid", 1e-3,
       [](Rng& rng, int) {
         return unary_case(rng, {2, 3, 5, 6}, 0.0f, 1.5f, true,
                           [](const Var& x) { return sigmoid(x); });
       }},
      {"scale", 1e-3,
       [](Rng& rng, int trial) {
         const float s = trial % 2 == 0 ? 0.75f : -1.25f;
         return unary_case(rng, {2, 3, 4, 5}, 0.5f, 1.5f, true,
                           [s](const Var& x) { return scale(x, s); });
       }},
      {"concat_channels", 1e-3,
       [](Rng& rng, int) {
         return binary_case(rng, {1, 2, 4, 5}, {1, 3, 4, 5},
                            [](const Var& a, const Var& b) { return concat_channels(a, b); });
       }},
      {"reshape", 1e-3,
       [](Rng& rng, int trial) {
         std::vector<int> to = trial % 2 == 0 ? std::vector<int>{6, 20}
                                              : std::vector<int>{2, 3, 20};
         return unary_case(rng, {2, 3, 4, 5}, 0.5f, 1.5f, true,
                           [to](const Var& x) { return reshape(x, to); });
       }},
      {"transpose_hw", 1e-3,
       [](Rng& rng, int) {
         return unary_case(rng, {2, 3, 4, 5}, 0.5f, 1.5f, true,
                           [](const Var& x) { return transpose_hw(x); });
       }},
      {"sum_all", 1e-3,
       [](Rng& rng, int) {
         return unary_case(rng, {3, 4, 5}, 0.5f, 1.5f, true,
                           [](const Var& x) { return sum_all(x); });
       }},
      {"conv2d", 2e-3, conv2d_case},
      {"conv2d_hw", 2e-3, conv2d_hw_case},
      {"conv1d_along", 2e-3, conv1d_case},
      {"batchnorm2d", 5e-3, batchnorm_case},
      {"bilinear_upsample", 1e-3,
       [](Rng& rng, int trial) {
         const int oh = trial % 2 == 0 ? 8 : 7;
         const int ow = trial % 2 == 0 ? 10 : 9;
         return unary_case(rng, {1, 2, 4, 5}, 0.3f, 1.0f, false,
                           [oh, ow](const Var& x) { return bilinear_upsample(x, oh, ow); });
       }},
      {"avg_pool2d", 1e-3,
       [](Rng& rng, int trial) {
         const PoolWindow win = trial % 2 == 0 ? PoolWindow{2, 2} : PoolWindow{3, 4};
         return unary_case(rng, {1, 3, 6, 8}, 0.3f, 1.0f, false,
                           [win](const Var& x) { return avg_pool2d(x, win); });
       }},
      {"strip_pool_h", 1e-3,
       [](Rng& rng, int) {
         return unary_case(rng, {1, 3, 6, 7}, 0.3f, 1.0f, false,
                           [](const Var& x) { return strip_pool_h(x); });
       }},
      {"strip_pool_v", 1e-3,
       [](Rng& rng, int) {
         return unary_case(rng, {1, 3, 6, 7}, 0.3f, 1.0f, false,
                           [](const Var& x) { return strip_pool_v(x); });
       }},
      {"adaptive_avg_pool2d", 1e-3,
       [](Rng& rng, int trial) {
         static const BinGrid grids[3] = {{2, 2}, {3, 3}, {2, 3}};
         const BinGrid grid = grids[trial % 3];
         return unary_case(rng, {1, 2, 6, 8}, 0.3f, 1.0f, false,
                           [grid](const Var& x) { return adaptive_avg_pool2d(x, grid); });
       }},
      {"global_avg_pool", 1e-3,
       [](Rng& rng, int) {
         return unary_case(rng, {1, 3, 4, 4}, 0.3f, 1.0f, false,
                           [](const Var& x) { return global_avg_pool(x); });
       }},
      {"softmax_ce", 1e-2, softmax_ce_case},
      {"spm", 4e-3, spm_case},
      {"mpm", 1e-2, mpm_case},
  };
  return entries;
}

double loss_value(const std::function<Var()>& forward) {
  NoGradGuard guard;
  Var y = forward();
  double acc = 0.0;
  for (float v : y->value.data) acc += v;
  return acc;
}

}  // namespace

std::vector<std::string> gradcheck_ops() {
  std::vector<std::string> names;
  names.reserve(registry().size());
  for (const OpEntry& e : registry()) names.emplace_back(e.name);
  return names;
}

GradCheckResult run_gradcheck_op(const std::string& name, const GradCheckOptions& opt) {
  const OpEntry* entry = nullptr;
  std::size_t index = 0;
  for (std::size_t i = 0; i < registry().size(); ++i) {
    if (registry()[i].name == name) {
      entry = &registry()[i];
      index = i;
      break;
    }
  }
  if (!entry) throw ConfigError("gradcheck: unknown op '" + name + "'");
  if (opt.trials < 1) throw ConfigError("gradcheck: trials must be >= 1");

  GradCheckResult result;
  result.op = name;
  result.trials = opt.trials;

  Rng op_rng = Rng(opt.seed).child(index + 1);
  for (int trial = 0; trial < opt.trials; ++trial) {
    Rng trial_rng = op_rng.child(static_cast<std::uint64_t>(trial) + 1);
    GradCase c = entry->make(trial_rng, trial);

    Var y = c.forward();
    Var loss = y->value.numel() == 1 ? y : sum_all(y);
    backward(loss);

    Rng coord_rng = trial_rng.child(0xc001);
    for (auto& [leaf_name, v] : c.leaves) {
      Tensor& value = v->value;
      const std::int64_t n = value.numel();
      std::set<std::int64_t> coords;
      if (n <= opt.max_coords) {
        for (std::int64_t i = 0; i < n; ++i) coords.insert(i);
      } else {
        while (static_cast<int>(coords.size()) < opt.max_coords)
          coords.insert(coord_rng.uniform_int(static_cast<int>(n)));
      }
      for (std::int64_t i : coords) {
        const double g = v->grad.data[static_cast<std::size_t>(i)];
        if (std::abs(g) <= opt.grad_floor) continue;
        const float orig = value.data[static_cast<std::size_t>(i)];
        const float xp = orig + static_cast<float>(entry->step);
        const float xm = orig - static_cast<float>(entry->step);
        value.data[static_cast<std::size_t>(i)] = xp;
        const double lp = loss_value(c.forward);
        value.data[static_cast<std::size_t>(i)] = xm;
        const double lm = loss_value(c.forward);
        value.data[static_cast<std::size_t>(i)] = orig;
        const double fd =
            (lp - lm) / (static_cast<double>(xp) - static_cast<double>(xm));
        const double rel = std::abs(fd - g) / std::max(std::abs(fd), std::abs(g));
        ++result.checked_coords;
        if (rel > result.max_rel_err) {
          result.max_rel_err = rel;
          result.worst_leaf = leaf_name;
        }
      }
    }
  }
  result.pass = result.checked_coords > 0 && result.max_rel_err < opt.tol;
  return result;
}

std::vector<GradCheckResult> run_gradcheck(const std::vector<std::string>& names,
                                           const GradCheckOptions& opt) {
  std::vector<std::string> run = names.empty() ? gradcheck_ops() : names;
  std::vector<GradCheckResult> results;
  results.reserve(run.size());
  for (const std::string& name : run) results.push_back(run_gradcheck_op(name, opt));
  return results;
}

}  // namespace spnet
