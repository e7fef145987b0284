#pragma once

#include <cstddef>
#include <string>
#include <string_view>

#include "tripsim/rng.hpp"
#include "tripsim/tensor.hpp"

namespace tripsim {

enum class KeyStrategy { uniform, normal, binary, orthogonal };

std::string to_string(KeyStrategy s);
KeyStrategy parse_key_strategy(std::string_view name);

/// Fixed, non-learnable anchors, one per prompt expert (rows of `keys`).
struct StaticKeySet {
  Mat keys;
  KeyStrategy strategy = KeyStrategy::orthogonal;

  std::size_t count() const noexcept { return keys.rows(); }
  std::size_t dims() const noexcept { return keys.cols(); }
  /// Parameters transmitted when the set is broadcast.
  std::size_t parameter_count() const noexcept { return keys.size(); }
};

/// Draws `count` keys of dimension `dims`.
///   uniform    entries in [0, 1)
///   normal     standard normal entries
///   binary     entries in {0, 1}
///   orthogonal Gram-Schmidt (two passes) over normal draws; unit rows
/// An all-zero draw is redrawn so every key has a usable direction.
/// Throws ConfigError when count > dims for the orthogonal strategy.
StaticKeySet init_keys(std::size_t count, std::size_t dims, KeyStrategy strategy, Rng& rng);

/// Row-orthonormal set of `count` vectors in R^dims (count <= dims).
Mat orthonormal_rows(std::size_t count, std::size_t dims, Rng& rng);

}  // namespace tripsim
