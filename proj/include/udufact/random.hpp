#pragma once

// Portable pseudo-random streams. The generator is xoshiro256** (Blackman and
// Vigna) seeded through splitmix64; normals come from the Box-Muller transform.
// Both are fixed so that instances replay identically from (arguments, seed).

#include <array>
#include <cstdint>

namespace udufact {

/// One splitmix64 step; also used to derive independent sub-seeds.
std::uint64_t splitmix64(std::uint64_t& state);

/// Seed for stream `stream` of a run seeded with `seed`.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();

  /// Uniform on [0, 1) with 53 random bits.
  double uniform();

  /// Uniform integer in [0, bound). bound must be > 0. Unbiased (rejection).
  std::uint64_t uniform_below(std::uint64_t bound);

  /// Standard normal via Box-Muller; the second variate of each pair is cached.
  double normal();

  /// Standard normal conditioned on |z| <= bound, by rejection.
  double truncated_normal(double bound);

 private:
  std::array<std::uint64_t, 4> s_{};
  double cached_normal_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace udufact
