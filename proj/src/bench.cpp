#include "spnet/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>

#include "spnet/autograd.hpp"
#include "spnet/modules.hpp"
#include "spnet/pooling.hpp"
#include "spnet/rng.hpp"

namespace spnet {
namespace {

// Largest all-pairs affinity matrix run_bench will materialize. The 64x64
// contrast case ((HW)^2 = 16.8M entries) is the largest supported; anything
// bigger exists only to make the quadratic blow-up argument, not to run.
constexpr double kAffinityEntryCap = 20'000'000.0;

struct BenchCase {
  std::function<float()> body;  // one forward evaluation; returns a probe value
  double flops = 0.0;
};

void check_rank4(const std::vector<int>& shape) {
  if (shape.size() != 4)
    throw ConfigError("bench: shape must be rank-4 [N,C,H,W], got rank " +
                      std::to_string(shape.size()));
  for (int e : shape)
    if (e < 1) throw ConfigError("bench: every shape extent must be >= 1");
}

Var random_input(const std::vector<int>& shape, std::uint64_t seed) {
  Tensor t(shape);
  Rng rng(seed);
  for (float& v : t.data) v = rng.uniform(0.1f, 1.0f);
  return constant(std::move(t));
}

// Dense pixel-pair similarity matrix, the memory footprint an attention-style
// module needs: every output entry is a channel dot product of two pixels.
float affinity_forward(const Tensor& x, std::vector<float>& matrix) {
  const int c = x.shape[1], hw = x.shape[2] * x.shape[3];
  const int n_pix = x.shape[0] * hw;
  std::vector<float> pixel_major(static_cast<std::size_t>(n_pix) * c);
  for (int ch = 0; ch < c; ++ch)
    for (int p = 0; p < n_pix; ++p)
      pixel_major[static_cast<std::size_t>(p) * c + ch] =
          x.data[static_cast<std::size_t>(ch) * n_pix + p];
  matrix.assign(static_cast<std::size_t>(n_pix) * n_pix, 0.0f);
  for (int p = 0; p < n_pix; ++p) {
    const float* a = &pixel_major[static_cast<std::size_t>(p) * c];
    for (int q = 0; q < n_pix; ++q) {
      const float* b = &pixel_major[static_cast<std::size_t>(q) * c];
      float acc = 0.0f;
      for (int ch = 0; ch < c; ++ch) acc += a[ch] * b[ch];
      matrix[static_cast<std::size_t>(p) * n_pix + q] = acc;
    }
  }
  return matrix[0];
}

BenchCase make_case(const std::string& op, const std::vector<int>& shape,
                    std::uint64_t seed) {
  const double n = shape[0], c = shape[1], h = shape[2], w = shape[3];
  Var x = random_input(shape, seed);
  BenchCase bc;
  if (op == "strip_pool_h") {
    // One row mean per (n,c,row): W adds then one division each.
    bc.flops = n * (c * h * w + c * h);
    bc.body = [x]() { return strip_pool_h(x)->value.data[0]; };
  } else if (op == "strip_pool_v") {
    bc.flops = n * (c * h * w + c * w);
    bc.body = [x]() { return strip_pool_v(x)->value.data[0]; };
  } else if (op == "avg_pool2d") {
    const PoolWindow win{2, 2};
    bc.flops = n * (c * h * w + c * (h / 2) * (w / 2));
    bc.body = [x, win]() { return avg_pool2d(x, win)->value.data[0]; };
  } else if (op == "adaptive_avg_pool2d") {
    const BinGrid grid{std::min(20, shape[2]), std::min(12, shape[3])};
    // Overlapping bins revisit edge pixels; bound the count by one extra
    // row/column strip per bin.
    bc.flops = n * c *
               ((h + grid.bins_h) * (w + grid.bins_w) +
                static_cast<double>(grid.bins_h) * grid.bins_w);
    bc.body = [x, grid]() { return adaptive_avg_pool2d(x, grid)->value.data[0]; };
  } else if (op == "global_avg_pool") {
    bc.flops = n * (c * h * w + c);
    bc.body = [x]() { return global_avg_pool(x)->value.data[0]; };
  } else if (op == "spm_forward") {
    Rng init(seed ^ 0x5eedbeefULL);
    auto spm = std::make_shared<Spm>(shape[1], GateKind::Strip, init);
    // Conv-dominated estimate: 1x1 fuse over the map, the two k=3 strip
    // convolutions, the pooling sums, and the gating product.
    bc.flops = n * (2.0 * c * c * h * w + 6.0 * c * c * (h + w) +
                    5.0 * c * h * w + 2.0 * c * (h + w));
    bc.body = [x, spm]() { return spm->forward(x, Mode::Eval)->value.data[0]; };
  } else if (op == "mpm_forward") {
    if (shape[1] % 4 != 0 || shape[1] < 4)
      throw ConfigError("bench: mpm_forward needs a channel count divisible by 4, got " +
                        std::to_string(shape[1]));
    Rng init(seed ^ 0x5eedbeefULL);
    auto mpm = std::make_shared<Mpm>(shape[1], MpmBranches::Both, init);
    const double b = c / 4.0;
    bc.flops = n * (4.0 * c * b * h * w + 18.0 * b * b * h * w +
                    12.0 * b * b * (h + w) + 8.0 * b * h * w +
                    4.0 * b * c * h * w);
    bc.body = [x, mpm]() { return mpm->forward(x, Mode::Eval)->value.data[0]; };
  } else if (op == "affinity") {
    const double entries = affinity_entries(shape[2], shape[3]) * n * n;
    if (entries > kAffinityEntryCap)
      throw ConfigError(
          "bench: affinity matrix would need " + std::to_string(entries) +
          " entries; the largest supported contrast case is 64x64");
    bc.flops = entries * 2.0 * c;
    auto matrix = std::make_shared<std::vector<float>>();
    bc.body = [x, matrix]() { return affinity_forward(x->value, *matrix); };
  } else {
    throw ConfigError("bench: unknown op '" + op + "'");
  }
  return bc;
}

}  // namespace

std::vector<std::string> bench_ops() {
  return {"strip_pool_h", "strip_pool_v",     "avg_pool2d", "adaptive_avg_pool2d",
          "global_avg_pool", "spm_forward", "mpm_forward", "affinity"};
}

double affinity_entries(int h, int w) {
  const double hw = static_cast<double>(h) * w;
  return hw * hw;
}

double strip_profile_entries(int h, int w) { return static_cast<double>(h) + w; }

double median_of(std::vector<double> values) {
  if (values.empty()) throw ConfigError("median_of: empty sample");
  std::sort(values.begin(), values.end());
  const std::size_t mid = values.size() / 2;
  if (values.size() % 2 == 1) return values[mid];
  return 0.5 * (values[mid - 1] + values[mid]);
}

double fit_loglog_exponent(const std::vector<std::pair<double, double>>& points) {
  if (points.size() < 2)
    throw ConfigError("fit_loglog_exponent: need at least two points");
  double mx = 0.0, my = 0.0;
  for (const auto& [px, py] : points) {
    if (px <= 0.0 || py <= 0.0)
      throw ConfigError("fit_loglog_exponent: points must be positive");
    mx += std::log(px);
    my += std::log(py);
  }
  mx /= static_cast<double>(points.size());
  my /= static_cast<double>(points.size());
  double sxx = 0.0, sxy = 0.0;
  for (const auto& [px, py] : points) {
    const double dx = std::log(px) - mx;
    sxx += dx * dx;
    sxy += dx * (std::log(py) - my);
  }
  if (sxx == 0.0) throw ConfigError("fit_loglog_exponent: x values are all equal");
  return sxy / sxx;
}

BenchRecord run_bench(const std::string& op, const std::vector<int>& shape, int reps,
                      std::uint64_t seed) {
  if (reps < 10)
    throw ConfigError("bench: reps must be >= 10, got " + std::to_string(reps));
  check_rank4(shape);
  BenchCase bc = make_case(op, shape, seed);

  NoGradGuard guard;
  float probe = 0.0f;
  for (int i = 0; i < 3; ++i) probe += bc.body();

  std::vector<double> times_ms;
  times_ms.reserve(static_cast<std::size_t>(reps));
  for (int i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    probe += bc.body();
    const auto t1 = std::chrono::steady_clock::now();
    times_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  if (!std::isfinite(probe))
    throw NumericError("bench: op '" + op + "' produced a non-finite value");

  BenchRecord r;
  r.op = op;
  r.shape = shape;
  r.reps = reps;
  r.median_ms = median_of(std::move(times_ms));
  r.flops = bc.flops;
  return r;
}

std::vector<BenchRecord> spm_forward_sweep(int reps, std::uint64_t seed) {
  // Square inputs whose area doubles at every step (45^2 ~ 2 * 32^2, ...).
  const int sizes[] = {32, 45, 64, 91, 128, 181};
  std::vector<BenchRecord> records;
  int index = 0;
  for (int s : sizes) {
    records.push_back(
        run_bench("spm_forward", {1, 16, s, s}, reps, seed + static_cast<std::uint64_t>(index)));
    ++index;
  }
  return records;
}

std::string bench_csv_header() { return "op,shape,reps,median_ms,flops"; }

std::string bench_csv_row(const BenchRecord& r) {
  std::string shape_str;
  for (std::size_t i = 0; i < r.shape.size(); ++i) {
    if (i) shape_str += 'x';
    shape_str += std::to_string(r.shape[i]);
  }
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%s,%s,%d,%.6f,%.0f", r.op.c_str(), shape_str.c_str(),
                r.reps, r.median_ms, r.flops);
  return buf;
}

}  // namespace spnet
