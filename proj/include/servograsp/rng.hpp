#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace sg {

// splitmix64; used to derive independent child seeds from a base seed.
inline uint64_t mix_seed(uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline uint64_t derive_seed(uint64_t base, uint64_t stream) {
  return mix_seed(base ^ mix_seed(stream));
}

inline uint64_t derive_seed(uint64_t base, uint64_t a, uint64_t b) {
  return derive_seed(derive_seed(base, a), b);
}

// Deterministic RNG with explicit draw semantics. Distribution code is
// spelled out here (not std::*_distribution) so the exact draw sequence is
// owned by this project and stable across standard library versions.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(mix_seed(seed)) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // One Gaussian draw via Box-Muller; always consumes exactly two uniforms.
  double normal(double mean, double sigma) {
    double u1 = uniform();
    double u2 = uniform();
    // Guard the log: push u1 away from zero.
    u1 = u1 > 0x1.0p-53 ? u1 : 0x1.0p-53;
    double r = std::sqrt(-2.0 * std::log(u1));
    return mean + sigma * r * std::cos(2.0 * std::numbers::pi * u2);
  }

  // Uniform integer in [0, n).
  size_t index(size_t n) {
    if (n <= 1) return 0;
    size_t i = static_cast<size_t>(uniform() * static_cast<double>(n));
    return i < n ? i : n - 1;
  }

  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 gen_;
};

}  // namespace sg
