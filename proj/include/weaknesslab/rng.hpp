#pragma once

#include <cmath>
#include <cstdint>

namespace weaknesslab {

// SplitMix64 (Steele, Lea & Flood). One generator backs every random choice
// in the lab so that an experiment is a pure function of its recorded seeds.
// It is seedable, splittable into independent named streams, and its output
// is fully determined by the standard's integer arithmetic, so results are
// bit-reproducible.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1), 53 random bits.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform in [lo, hi).
  double next_uniform(double lo, double hi) {
    return lo + (hi - lo) * next_double();
  }

  // Standard normal via Box-Muller. No cached spare: two uniforms per call
  // keeps the stream position a simple function of the call count.
  double next_normal() {
    double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(6.283185307179586476925286766559 * u2);
  }

  // Unbiased uniform integer in [0, n), n >= 1, by masked rejection.
  std::uint64_t next_below(std::uint64_t n) {
    if (n <= 1) return 0;
    std::uint64_t mask = ~0ull >> __builtin_clzll(n - 1 | 1);
    std::uint64_t r;
    do {
      r = next_u64() & mask;
    } while (r >= n);
    return r;
  }

  // Child generator for an independent named stream. Children derived from
  // the same parent state with distinct stream ids do not collide in
  // practice for the stream counts used here.
  SplitMix64 split(std::uint64_t stream) const {
    SplitMix64 child(state_ ^ (0x9E3779B97F4A7C15ull * (stream + 1)));
    child.next_u64();
    return child;
  }

 private:
  std::uint64_t state_;
};

// Documented mixing function used to derive per-network seeds from
// (master_seed, index): one SplitMix64 finalizer step over the xor of the
// master seed with a golden-ratio multiple of the index.
inline std::uint64_t mix64(std::uint64_t a, std::uint64_t b) {
  SplitMix64 g(a ^ (0x9E3779B97F4A7C15ull * (b + 1)));
  return g.next_u64();
}

}  // namespace weaknesslab
