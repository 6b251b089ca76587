#pragma once

#include <cstdint>

namespace bima {

// xoshiro256++ generator with splitmix64 seeding. The chains must replay
// bit-identically from a seed across runs and build configurations, which
// rules out the unspecified std::<distribution> implementations; draws are
// generated with fixed textbook transforms instead.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();

  // Uniform on (0, 1]; always safe under log().
  double uniform();

  // Standard normal via Marsaglia's polar method (one spare cached).
  double normal();

  // Gamma(shape, 1) via Marsaglia-Tsang, with the power boost for shape < 1.
  double gamma(double shape);

  // Inverse-gamma(shape, rate): 1/Gamma(shape, rate).
  double inverse_gamma(double shape, double rate);

  // Statistically independent generator for a derived stream (replication
  // workers, etc). Deterministic in (seed, stream).
  static Rng derived(std::uint64_t seed, std::uint64_t stream);

 private:
  std::uint64_t state_[4];
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace bima
