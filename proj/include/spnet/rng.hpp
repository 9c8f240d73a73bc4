#pragma once

#include <cstdint>

namespace spnet {

/// Deterministic splitmix64 generator. Identical seeds produce identical
/// streams bit-for-bit on every platform; no libc or libstdc++ state involved.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  float uniform(float lo, float hi) {
    return lo + static_cast<float>(uniform()) * (hi - lo);
  }

  /// Uniform integer in [0, n). n must be positive.
  int uniform_int(int n) { return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n)); }

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal via Box-Muller; consumes exactly two draws per call.
  float normal();

  /// Independent child stream; distinct salts give decorrelated streams.
  Rng child(std::uint64_t salt) const {
    Rng r(state_ ^ (0x5851f42d4c957f2dULL * (salt + 1)));
    r.next_u64();
    return r;
  }

 private:
  std::uint64_t state_;
};

}  // namespace spnet
