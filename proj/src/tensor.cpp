#include "tripsim/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "tripsim/errors.hpp"

namespace tripsim {

Mat::Mat(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Mat::Mat(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), data_(std::move(values)) {
  if (data_.size() != rows * cols) {
    throw StructuralError("matrix data length " + std::to_string(data_.size()) +
                          " does not match shape " + std::to_string(rows) + "x" +
                          std::to_string(cols));
  }
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw StructuralError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

namespace {

double max_abs(std::span<const double> a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::abs(v));
  return m;
}

// squares of very small or very large entries leave the double range
bool needs_rescale(double sq) { return sq < 1e-290 || sq > 1e290; }

Vec scaled(std::span<const double> a) {
  const double m = max_abs(a);
  Vec out(a.begin(), a.end());
  if (m > 0.0 && std::isfinite(m))
    for (double& v : out) v /= m;
  return out;
}

}  // namespace

double norm(std::span<const double> a) {
  const double sq = dot(a, a);
  if (!needs_rescale(sq)) return std::sqrt(sq);
  const double m = max_abs(a);
  if (m == 0.0 || !std::isfinite(m)) return std::sqrt(sq);
  const Vec s = scaled(a);
  return m * std::sqrt(dot(s, s));
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw StructuralError("squared_distance: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw StructuralError("axpy: length mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

bool all_finite(std::span<const double> a) noexcept {
  return std::all_of(a.begin(), a.end(), [](double v) { return std::isfinite(v); });
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw StructuralError("cosine: length mismatch");
  const double na = norm(a);
  const double nb = norm(b);
  if (!(na > 0.0)) throw DomainError("cosine: argument a has zero norm");
  if (!(nb > 0.0)) throw DomainError("cosine: argument b has zero norm");
  if (needs_rescale(na * na) || needs_rescale(nb * nb)) {
    const Vec sa = scaled(a), sb = scaled(b);
    return std::clamp(dot(sa, sb) / (std::sqrt(dot(sa, sa)) * std::sqrt(dot(sb, sb))), -1.0, 1.0);
  }
  // Product of the two norms is symmetric, so cosine(a,b) == cosine(b,a) bitwise.
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

Vec normalize(std::span<const double> a) {
  const double n = norm(a);
  if (!(n > 0.0)) throw DomainError("normalize: zero-norm vector");
  Vec out(a.begin(), a.end());
  for (double& v : out) v /= n;
  return out;
}

Vec row_mean(const Mat& m) {
  Vec mean(m.cols(), 0.0);
  if (m.rows() == 0) return mean;
  for (std::size_t r = 0; r < m.rows(); ++r) axpy(1.0, m.row(r), mean);
  for (double& v : mean) v /= static_cast<double>(m.rows());
  return mean;
}

}  // namespace tripsim
