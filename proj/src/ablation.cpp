#include "spnet/ablation.hpp"

#include <cmath>
#include <cstdio>
#include <memory>

#include "spnet/data.hpp"
#include "spnet/evaluate.hpp"
#include "spnet/net.hpp"
#include "spnet/train.hpp"

namespace spnet {
namespace {

double mean_of(const std::vector<double>& xs) {
  double acc = 0.0;
  for (double x : xs) acc += x;
  return acc / static_cast<double>(xs.size());
}

double sample_std(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean_of(xs);
  double acc = 0.0;
  for (double x : xs) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(xs.size() - 1));
}

const AblationRow& find_row(const AblationReport& report, const std::string& preset) {
  for (const AblationRow& row : report.rows)
    if (row.preset == preset) return row;
  throw ConfigError("ablation: preset '" + preset + "' missing from report");
}

OrderingCheck make_check(const AblationReport& report, const std::string& high,
                         const std::string& low) {
  const AblationRow& h = find_row(report, high);
  const AblationRow& l = find_row(report, low);
  OrderingCheck c;
  c.description = high + " > " + low;
  c.lhs = h.miou;
  c.rhs = l.miou;
  c.margin = h.miou - l.miou;
  c.required = l.miou_std;
  c.pass = c.margin > c.required && c.margin > 0.0;
  return c;
}

}  // namespace

MetricReport run_preset_once(const RunConfig& cfg, std::uint64_t seed, int iter_override) {
  cfg.validate();
  // One stream of scenes; the leading train_samples slice trains, the next
  // eval_samples slice is held out. Corpus prefixes are stable under count
  // changes, so every preset and seed sees the identical split.
  const std::vector<SegmentationSample> corpus =
      generate_corpus(cfg.scene, cfg.train_samples + cfg.eval_samples);
  const std::vector<SegmentationSample> train_set(corpus.begin(),
                                                  corpus.begin() + cfg.train_samples);
  const std::vector<SegmentationSample> eval_set(corpus.begin() + cfg.train_samples,
                                                 corpus.end());

  std::unique_ptr<Network> net = build_spnet(cfg.backbone, cfg.placement, cfg.head, seed);
  TrainConfig tc = cfg.train;
  tc.seed = seed;
  if (iter_override > 0) tc.max_iter = iter_override;
  train_network(*net, train_set, tc);
  return evaluate(*net, eval_set, /*multi_scale=*/false, /*flip=*/false);
}

AblationRow run_ablation(const std::string& preset, int num_seeds) {
  if (num_seeds < 1) throw ConfigError("ablation: num_seeds must be >= 1");
  const RunConfig cfg = preset_run_config(preset);  // rejects unknown names

  AblationRow row;
  row.preset = preset;
  {
    std::unique_ptr<Network> net =
        build_spnet(cfg.backbone, cfg.placement, cfg.head, cfg.train.seed);
    row.params = net->param_count_total();
  }
  std::vector<double> accs;
  for (int i = 0; i < num_seeds; ++i) {
    const std::uint64_t seed = cfg.train.seed + static_cast<std::uint64_t>(i);
    const MetricReport m = run_preset_once(cfg, seed);
    row.seed_mious.push_back(m.miou);
    accs.push_back(m.pixel_acc);
  }
  row.miou = mean_of(row.seed_mious);
  row.pixel_acc = mean_of(accs);
  row.miou_std = sample_std(row.seed_mious);
  return row;
}

AblationReport run_ablation_suite(int num_seeds) {
  AblationReport report;
  for (const char* name : kPresetNames) report.rows.push_back(run_ablation(name, num_seeds));

  const std::int64_t base = find_row(report, "base-fcn").params;
  for (AblationRow& row : report.rows) row.param_delta = row.params - base;

  report.checks.push_back(make_check(report, "2mpm+spm", "2mpm"));
  report.checks.push_back(make_check(report, "2mpm", "1mpm"));
  report.checks.push_back(make_check(report, "1mpm", "base-fcn"));
  report.checks.push_back(make_check(report, "2mpm", "srd-only"));
  report.checks.push_back(make_check(report, "2mpm", "lrd-only"));
  report.checks.push_back(make_check(report, "2mpm+spm", "se-baseline"));

  report.all_pass = true;
  for (const OrderingCheck& c : report.checks) report.all_pass = report.all_pass && c.pass;
  return report;
}

std::string ablation_table(const AblationReport& report) {
  std::string out =
      "preset        params    delta     mIoU    std      per-seed\n";
  char buf[256];
  for (const AblationRow& row : report.rows) {
    std::snprintf(buf, sizeof(buf), "%-12s %8lld %+8lld  %.4f  %.4f  ",
                  row.preset.c_str(), static_cast<long long>(row.params),
                  static_cast<long long>(row.param_delta), row.miou, row.miou_std);
    out += buf;
    for (std::size_t i = 0; i < row.seed_mious.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%s%.4f", i ? "/" : "", row.seed_mious[i]);
      out += buf;
    }
    out += '\n';
  }
  for (const OrderingCheck& c : report.checks) {
    std::snprintf(buf, sizeof(buf), "%-24s %.4f vs %.4f  margin %+.4f  needs > %.4f  [%s]\n",
                  c.description.c_str(), c.lhs, c.rhs, c.margin, c.required,
                  c.pass ? "ok" : "FAIL");
    out += buf;
  }
  return out;
}

std::string ablation_csv(const AblationReport& report) {
  std::string out = "preset,params,param_delta,miou_mean,miou_std,pixel_acc,seed_mious\n";
  char buf[256];
  for (const AblationRow& row : report.rows) {
    std::snprintf(buf, sizeof(buf), "%s,%lld,%lld,%.6f,%.6f,%.6f,", row.preset.c_str(),
                  static_cast<long long>(row.params),
                  static_cast<long long>(row.param_delta), row.miou, row.miou_std,
                  row.pixel_acc);
    out += buf;
    for (std::size_t i = 0; i < row.seed_mious.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%s%.6f", i ? ";" : "", row.seed_mious[i]);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

}  // namespace spnet
