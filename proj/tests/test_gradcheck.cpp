#include <algorithm>
#include <cstdio>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "spnet/gradcheck.hpp"
#include "spnet/ops.hpp"
#include "spnet/tensor.hpp"

using namespace spnet;

namespace {

struct CorruptionGuard {
  ~CorruptionGuard() { set_conv2d_adjoint_corruption(false); }
};

}  // namespace

TEST_CASE("registry lists every op exactly once and covers the composites") {
  std::vector<std::string> ops = gradcheck_ops();
  std::set<std::string> unique(ops.begin(), ops.end());
  CHECK(unique.size() == ops.size());

  for (const char* required :
       {"add", "mul", "relu", "sigmoid", "scale", "concat_channels", "reshape",
        "transpose_hw", "sum_all", "conv2d", "conv2d_hw", "conv1d_along", "batchnorm2d",
        "bilinear_upsample", "avg_pool2d", "strip_pool_h", "strip_pool_v",
        "adaptive_avg_pool2d", "global_avg_pool", "softmax_ce", "spm", "mpm"}) {
    CAPTURE(required);
    CHECK(unique.count(required) == 1);
  }
}

TEST_CASE("the full finite-difference suite passes at the acceptance tolerances") {
  GradCheckOptions opt;  // 20 trials, tol 1e-3, floor 1e-4
  std::vector<GradCheckResult> results = run_gradcheck({}, opt);
  REQUIRE(results.size() == gradcheck_ops().size());
  for (const GradCheckResult& r : results) {
    CAPTURE(r.op);
    CAPTURE(r.max_rel_err);
    CAPTURE(r.worst_leaf);
    CHECK(r.pass);
    CHECK(r.trials == 20);
    CHECK(r.checked_coords > 0);
    CHECK(r.max_rel_err < 1e-3);
    std::printf("  gradcheck %-20s coords %6lld  max rel err %.3e  (%s)\n", r.op.c_str(),
                static_cast<long long>(r.checked_coords), r.max_rel_err,
                r.worst_leaf.c_str());
  }
}

TEST_CASE("deliberately corrupted conv2d adjoint makes the suite fail") {
  CorruptionGuard guard;
  GradCheckOptions opt;
  opt.trials = 3;

  set_conv2d_adjoint_corruption(true);
  GradCheckResult broken = run_gradcheck_op("conv2d", opt);
  CHECK(!broken.pass);
  CHECK(broken.max_rel_err > 1e-2);

  set_conv2d_adjoint_corruption(false);
  GradCheckResult healthy = run_gradcheck_op("conv2d", opt);
  CHECK(healthy.pass);
}

TEST_CASE("gradcheck runs are deterministic") {
  GradCheckOptions opt;
  opt.trials = 2;
  GradCheckResult a = run_gradcheck_op("spm", opt);
  GradCheckResult b = run_gradcheck_op("spm", opt);
  CHECK(a.max_rel_err == b.max_rel_err);
  CHECK(a.checked_coords == b.checked_coords);
}

TEST_CASE("unknown ops and bad options are rejected") {
  GradCheckOptions opt;
  CHECK_THROWS_AS(run_gradcheck_op("softmax", opt), ConfigError);
  opt.trials = 0;
  CHECK_THROWS_AS(run_gradcheck_op("add", opt), ConfigError);
}
