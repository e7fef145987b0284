#include "tripsim/keys.hpp"

#include <cmath>

#include "tripsim/errors.hpp"

namespace tripsim {

std::string to_string(KeyStrategy s) {
  switch (s) {
    case KeyStrategy::uniform: return "uniform";
    case KeyStrategy::normal: return "normal";
    case KeyStrategy::binary: return "binary";
    case KeyStrategy::orthogonal: return "orthogonal";
  }
  return "orthogonal";
}

KeyStrategy parse_key_strategy(std::string_view name) {
  if (name == "uniform") return KeyStrategy::uniform;
  if (name == "normal") return KeyStrategy::normal;
  if (name == "binary") return KeyStrategy::binary;
  if (name == "orthogonal") return KeyStrategy::orthogonal;
  throw ConfigError("unknown key strategy '" + std::string(name) +
                    "' (expected uniform|normal|binary|orthogonal)");
}

Mat orthonormal_rows(std::size_t count, std::size_t dims, Rng& rng) {
  if (count > dims) {
    throw ConfigError("orthogonal keys need count <= dims (got " + std::to_string(count) +
                      " > " + std::to_string(dims) + ")");
  }
  Mat q(count, dims);
  for (std::size_t i = 0; i < count; ++i) {
    auto v = q.row(i);
    for (;;) {
      for (double& x : v) x = rng.normal();
      const double start = norm(v);
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t j = 0; j < i; ++j) {
          const double proj = dot(v, q.row(j));
          axpy(-proj, q.row(j), v);
        }
      }
      const double n = norm(v);
      // A draw almost inside the span of earlier rows loses too much precision.
      if (n > 1e-6 * start) {
        for (double& x : v) x /= n;
        break;
      }
    }
  }
  return q;
}

StaticKeySet init_keys(std::size_t count, std::size_t dims, KeyStrategy strategy, Rng& rng) {
  if (count == 0 || dims == 0) throw ConfigError("init_keys: count and dims must be positive");
  StaticKeySet set;
  set.strategy = strategy;
  if (strategy == KeyStrategy::orthogonal) {
    set.keys = orthonormal_rows(count, dims, rng);
    return set;
  }
  set.keys = Mat(count, dims);
  for (std::size_t i = 0; i < count; ++i) {
    auto v = set.keys.row(i);
    do {
      for (double& x : v) {
        switch (strategy) {
          case KeyStrategy::uniform: x = rng.uniform(); break;
          case KeyStrategy::normal: x = rng.normal(); break;
          default: x = static_cast<double>(rng.below(2)); break;
        }
      }
    } while (!(norm(v) > 0.0));
  }
  return set;
}

}  // namespace tripsim
