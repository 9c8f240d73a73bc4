#pragma once

#include <string>
#include <utility>
#include <vector>

#include "spnet/tensor.hpp"

namespace spnet {

/// One micro-benchmark measurement: op name, input shape, repetition count,
/// median wall time (monotonic clock, median of the timed reps after 3
/// warm-up reps), and a floating-point-operation estimate for one forward
/// evaluation. The median is reported rather than the mean so a single
/// scheduler hiccup cannot skew the figure.
struct BenchRecord {
  std::string op;
  std::vector<int> shape;
  int reps = 0;
  double median_ms = 0.0;
  double flops = 0.0;
};

/// Names accepted by run_bench: the pooling family, the two modules, and a
/// naive all-pairs affinity reference that materializes the full (HW)x(HW)
/// similarity matrix an attention block would need.
std::vector<std::string> bench_ops();

/// Benchmark one op on a [N,C,H,W] input filled from `seed`. reps >= 10 timed
/// repetitions after 3 warm-ups; throws ConfigError for unknown ops, invalid
/// shapes, reps < 10, or an affinity request whose matrix would be
/// unreasonably large to materialize.
BenchRecord run_bench(const std::string& op, const std::vector<int>& shape, int reps,
                      std::uint64_t seed);

/// Strip-pooling module forward over a doubling sweep of the spatial area
/// (square inputs, fixed channel count); used for the linear-scaling check.
std::vector<BenchRecord> spm_forward_sweep(int reps, std::uint64_t seed);

/// Least-squares slope of log(y) against log(x); the growth exponent of a
/// power law measured at the sweep points.
double fit_loglog_exponent(const std::vector<std::pair<double, double>>& points);

/// Entries of the dense all-pairs affinity matrix for an HxW map: (H*W)^2.
double affinity_entries(int h, int w);

/// Entries the strip-pooling profiles need for the same map: H + W.
double strip_profile_entries(int h, int w);

/// Lower median (even counts average the two central values).
double median_of(std::vector<double> values);

std::string bench_csv_header();
std::string bench_csv_row(const BenchRecord& r);

}  // namespace spnet
