#pragma once

#include <cmath>
#include <cstdint>

namespace uda {

/// Deterministic splittable RNG. All draws are derived from splitmix64 output
/// directly (no std::*_distribution), so sequences are identical across
/// platforms and can be replayed by tests that follow the same draw order.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Uniform in {0, 1, ..., n-1}.
  std::uint64_t uniform_index(std::uint64_t n) { return next() % n; }

  /// Standard normal via Box-Muller (one value per call; no caching so the
  /// draw count stays predictable for replay).
  double gaussian() {
    double u1 = uniform01();
    double u2 = uniform01();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  bool bernoulli(double p) { return uniform01() < p; }

  /// Independent child stream; parent state is not advanced.
  Rng split(std::uint64_t salt) const {
    std::uint64_t mixed = state_ ^ (0x9e3779b97f4a7c15ULL + salt * 0xda942042e4dd58b5ULL);
    Rng child(mixed);
    child.next();
    return child;
  }

 private:
  std::uint64_t state_;
};

}  // namespace uda
