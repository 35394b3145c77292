#pragma once

#include <cstdint>

namespace red {

// SplitMix64. Integer arithmetic only, so the stream (and anything generated
// from it) is byte-identical across platforms for the same seed.
struct SplitMix64 {
  std::uint64_t state = 0;

  explicit SplitMix64(std::uint64_t seed) : state(seed) {}

  std::uint64_t next() {
    state += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1), 53 mantissa bits
  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // uniform in [-1, 1)
  double symmetric() { return 2.0 * uniform01() - 1.0; }

  // uniform integer in [0, n)
  std::uint64_t below(std::uint64_t n) { return next() % n; }
};

}  // namespace red
