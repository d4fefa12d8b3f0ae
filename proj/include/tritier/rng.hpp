#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace tritier {

/// Deterministic random stream. The engine (mt19937_64) is fully specified by
/// the standard; the distribution draws below are implemented by hand so that
/// two builds of this project produce identical sequences. `fork(i)` derives
/// an independent child stream from the original seed, independent of how
/// many values were drawn from the parent -- this is what makes parallel
/// loops (one child stream per index) bit-reproducible at any thread count.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(mix(seed)) {}

  std::uint64_t seed() const { return seed_; }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (two engine draws per value, no cache).
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }

  double normal(double mean, double std) { return mean + std * normal(); }

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t integer(std::uint64_t n) {
    // Rejection-free threshold method would be overkill at desk scale; a
    // 53-bit mantissa draw is unbiased for any n we use (n << 2^53).
    return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[static_cast<std::size_t>(integer(i))]);
    }
  }

  /// Child stream keyed by `stream`; depends only on the original seed.
  Rng fork(std::uint64_t stream) const {
    return Rng(mix(seed_ ^ (0x9e3779b97f4a7c15ull * (stream + 1))));
  }

 private:
  static std::uint64_t mix(std::uint64_t x) {
    // splitmix64 finalizer; spreads nearby seeds apart.
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace tritier
