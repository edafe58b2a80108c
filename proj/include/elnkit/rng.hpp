#pragma once

#include <array>
#include <cstddef>
#include <cstdint>

namespace elnkit {

// SplitMix64 (Steele, Lea, Flood 2014). Used to expand a 64-bit seed into
// generator state and to derive independent sub-seeds.
std::uint64_t splitmix64(std::uint64_t& state);

// Mixes a parent seed with a stream identifier into a new seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

// xoshiro256** 1.0 (Blackman & Vigna). Every random draw in the toolkit goes
// through this type; it never depends on the platform's <random> engines or
// distributions, so streams are identical on every compiler and OS.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  // Uniform on [lo, hi).
  double uniform(double lo, double hi);
  // Uniform integer on [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n);
  // Standard normal via the Marsaglia polar method.
  double normal();

 private:
  std::array<std::uint64_t, 4> s_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

inline Rng seeded_rng(std::uint64_t seed) { return Rng(seed); }

}  // namespace elnkit
