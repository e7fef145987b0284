#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "tripsim/rng.hpp"
#include "tripsim/tensor.hpp"

namespace tripsim {

/// One image's tokens, one per row; row 0 is the CLS-analog token.
using TokenMatrix = Mat;

inline constexpr std::size_t kDropped = std::numeric_limits<std::size_t>::max();

struct CapacityConfig {
  std::size_t clusters = 4;
  double alpha = 1.0;       ///< capacity factor
  std::size_t max_iters = 10;
  double tol = 1e-4;        ///< stop once the largest centroid shift falls below this
  double eta_theta = 0.1;   ///< dual ascent step for the per-cluster penalties
  bool capacity_enabled = true;

  void validate() const;
  /// floor(alpha * tokens / clusters), at least 1; `tokens` when capacity is disabled.
  std::size_t capacity(std::size_t tokens) const;
};

struct ClusterResult {
  std::vector<std::size_t> assignment;  ///< token -> cluster id or kDropped
  Mat centroids;                        ///< clusters x D
  std::vector<double> thetas;           ///< penalties, all >= 0
  std::vector<std::size_t> sizes;
  std::size_t dropped_count = 0;
  std::size_t capacity = 0;
  std::size_t iterations = 0;
  double objective = 0.0;  ///< sum of squared distances of assigned tokens to their centroid

  std::size_t assigned_count() const noexcept;
};

/// ||token - centroid||^2 + theta
double assignment_cost(std::span<const double> token, std::span<const double> centroid,
                       double theta);

/// k-means++ seeding. When every remaining token coincides with a chosen seed,
/// the lowest-index token not yet chosen is taken instead.
Mat kmeanspp_seeds(const TokenMatrix& tokens, std::size_t k, Rng& rng);

/// Penalised k-means under hard per-cluster capacity, seeded with k-means++.
///
/// Each sweep scores every token against every cluster with assignment_cost,
/// then places tokens in ascending index order. A token goes to its cheapest
/// cluster; a full cluster admits it only when it is strictly cheaper than the
/// cluster's most expensive member, which is then displaced. Displaced or
/// rejected tokens continue down their own preference list, and a token that
/// runs out of clusters is dropped. After the sweep the penalties follow
/// theta_m <- max(0, theta_m + eta * (preferred_m - s)), where preferred_m counts
/// tokens whose first choice was m, and centroids move to the member means.
///
/// Throws DegenerateInputError when fewer than `clusters` distinct tokens exist
/// and the capacity is too loose to split duplicates apart.
ClusterResult cluster(const TokenMatrix& tokens, const CapacityConfig& cfg, Rng& rng);

/// Same procedure from explicit starting centroids (clusters x D).
ClusterResult cluster_from(const TokenMatrix& tokens, const CapacityConfig& cfg,
                           Mat initial_centroids);

/// Number of distinct rows (exact equality).
std::size_t distinct_rows(const TokenMatrix& tokens);

}  // namespace tripsim
