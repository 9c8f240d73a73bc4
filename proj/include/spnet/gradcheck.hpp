#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace spnet {

/// Knobs for the finite-difference gradient suite. Defaults match the
/// acceptance bar: >= 20 randomized trials per op, relative error < 1e-3 on
/// gradient entries with |g| > 1e-4.
struct GradCheckOptions {
  int trials = 20;
  double tol = 1e-3;
  double grad_floor = 1e-4;
  int max_coords = 12;  // FD coordinates sampled per leaf per trial
  std::uint64_t seed = 20260822;
};

struct GradCheckResult {
  std::string op;
  int trials = 0;
  std::int64_t checked_coords = 0;
  double max_rel_err = 0.0;
  std::string worst_leaf;  // leaf whose coordinate produced max_rel_err
  bool pass = false;
};

/// Registered op names, each exactly once, in registry order. Covers every
/// differentiable primitive plus the two composite modules (spm, mpm).
std::vector<std::string> gradcheck_ops();

/// Runs one op's finite-difference suite; unknown names raise ConfigError.
GradCheckResult run_gradcheck_op(const std::string& name, const GradCheckOptions& opt);

/// Runs the listed ops (all registered ops when `names` is empty).
std::vector<GradCheckResult> run_gradcheck(const std::vector<std::string>& names,
                                           const GradCheckOptions& opt);

}  // namespace spnet
