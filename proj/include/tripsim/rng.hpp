#pragma once

#include <cstdint>
#include <initializer_list>

namespace tripsim {

/// Counter-based generator: draw k is a fixed bijective mix of (seed + k * golden).
/// Integer state only, so sequences are identical on every platform. Floating
/// draws are built from the integer stream with plain IEEE arithmetic.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) noexcept : seed_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t counter() const noexcept { return counter_; }

  std::uint64_t next_u64() noexcept;

  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform() noexcept;

  /// Standard normal via Box-Muller (one draw per two uniforms, no caching).
  double normal() noexcept;

  /// Uniform integer in [0, n); n must be positive.
  std::uint64_t below(std::uint64_t n) noexcept;

  /// Independent child stream keyed by `streams`; does not advance this generator.
  Rng derive(std::initializer_list<std::uint64_t> streams) const noexcept;

  static std::uint64_t mix64(std::uint64_t z) noexcept;

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

}  // namespace tripsim
