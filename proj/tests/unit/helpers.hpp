#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "tripsim/rng.hpp"
#include "tripsim/tensor.hpp"

namespace testutil {

inline tripsim::Mat random_mat(std::size_t r, std::size_t c, tripsim::Rng& rng, double scale = 1.0) {
  tripsim::Mat m(r, c);
  for (double& v : m.flat()) v = scale * rng.normal();
  return m;
}

inline double max_abs_diff(const tripsim::Mat& a, const tripsim::Mat& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a.flat()[i] - b.flat()[i]));
  return d;
}

}  // namespace testutil
