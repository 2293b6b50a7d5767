#pragma once

#include <cstddef>
#include <cstdint>

namespace rdns {

/// SplitMix64 finalizer (Steele, Lea & Flood). Used for seeding and for deriving sub-seeds.
///   z += 0x9E3779B97F4A7C15
///   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
///   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
///   z ^ (z >> 31)
std::uint64_t splitmix64(std::uint64_t z);

/// Sub-seed for item `index` of a stream rooted at `master`.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index);

/// xorshift64* (Vigna 2016): shifts 12, 25, 27 and output multiplier 0x2545F4914F6CDD1D.
/// The state is seeded through splitmix64 so that seed 0 is valid. All floating draws are
/// built from the integer stream with fixed arithmetic so sequences are reproducible
/// across platforms and languages.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  /// Uniform integer in [0, n). Uses rejection to avoid modulo bias.
  std::uint64_t below(std::uint64_t n);
  /// Standard normal via the Box-Muller transform (one value per call, no caching).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
};

}  // namespace rdns
