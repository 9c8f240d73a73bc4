#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spnet/config.hpp"
#include "spnet/metrics.hpp"

namespace spnet {

/// Result of one preset trained and evaluated across the seed set.
struct AblationRow {
  std::string preset;
  std::vector<double> seed_mious;   // one entry per seed, same order as the seed list
  double miou = 0.0;                // mean over seeds
  double pixel_acc = 0.0;           // mean over seeds
  double miou_std = 0.0;            // sample standard deviation over seeds
  std::int64_t params = 0;
  std::int64_t param_delta = 0;     // versus the base-fcn preset
};

/// One directional comparison between two presets. The margin must exceed
/// the seed-to-seed standard deviation of the lower preset for the ordering
/// to count as established rather than noise.
struct OrderingCheck {
  std::string description;          // e.g. "2mpm+spm > 2mpm"
  double lhs = 0.0;
  double rhs = 0.0;
  double margin = 0.0;              // lhs - rhs
  double required = 0.0;            // std of the lower preset
  bool pass = false;
};

struct AblationReport {
  std::vector<AblationRow> rows;    // preset order of kPresetNames
  std::vector<OrderingCheck> checks;
  bool all_pass = false;
};

/// Train the preset's network on the preset's synthetic corpus at one seed
/// (network init and schedule stream both derive from it; the corpus itself
/// stays fixed by the preset) and evaluate single-scale on the held-out
/// slice. iter_override > 0 replaces the preset's max_iter (used by smoke
/// tests; the real harness runs the preset as configured).
MetricReport run_preset_once(const RunConfig& cfg, std::uint64_t seed,
                             int iter_override = 0);

/// One preset across `num_seeds` seeds; fills the metric statistics and
/// parameter counts. Rejects unknown preset names.
AblationRow run_ablation(const std::string& preset, int num_seeds);

/// Every preset, the six directional comparisons, and the overall verdict.
AblationReport run_ablation_suite(int num_seeds);

/// Human-readable table plus one line per ordering check.
std::string ablation_table(const AblationReport& report);

/// CSV emission: header and one row per preset.
std::string ablation_csv(const AblationReport& report);

}  // namespace spnet
