#pragma once

#include <cstdint>
#include <utility>

namespace povm {

// SplitMix64. Tiny, splittable, with published reference outputs
// (seed 0 -> e220a8397b1dcdaf ...). Every random draw in the simulator
// and in jobs goes through this so runs replay bit-exactly.
struct PrngState {
  std::uint64_t state = 0;
};

inline std::pair<std::uint64_t, PrngState> prng_next(PrngState s) {
  s.state += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = s.state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return {z ^ (z >> 31), s};
}

// Stateful convenience wrapper around the pure step function.
class Prng {
 public:
  explicit Prng(std::uint64_t seed) : s_{seed} {}

  std::uint64_t next() {
    auto [v, s] = prng_next(s_);
    s_ = s;
    return v;
  }

  // Uniform in [lo, hi] via rejection sampling, bias-free.
  std::uint64_t uniform(std::uint64_t lo, std::uint64_t hi) {
    std::uint64_t span = hi - lo + 1;
    if (span == 0) return next();  // full range
    std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    std::uint64_t v;
    do {
      v = next();
    } while (v >= limit);
    return lo + v % span;
  }

  // Derive an independent stream (e.g. per node, per job).
  Prng split() { return Prng(next()); }

 private:
  PrngState s_;
};

}  // namespace povm
