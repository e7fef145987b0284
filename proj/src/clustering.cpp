#include "tripsim/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <string>

#include "tripsim/errors.hpp"

namespace tripsim {

void CapacityConfig::validate() const {
  if (clusters < 1) throw ConfigError("capacity.clusters: must be >= 1");
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ConfigError("capacity.alpha: must be > 0");
  if (max_iters < 1) throw ConfigError("capacity.max_iters: must be >= 1");
  if (!(tol >= 0.0)) throw ConfigError("capacity.tol: must be >= 0");
  if (!(eta_theta > 0.0)) throw ConfigError("capacity.eta_theta: must be > 0");
}

std::size_t CapacityConfig::capacity(std::size_t tokens) const {
  if (!capacity_enabled) return tokens;
  const double raw = std::floor(alpha * static_cast<double>(tokens) / static_cast<double>(clusters));
  if (raw < 1.0) return 1;
  return raw >= static_cast<double>(tokens) ? tokens : static_cast<std::size_t>(raw);
}

std::size_t ClusterResult::assigned_count() const noexcept {
  return std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
}

double assignment_cost(std::span<const double> token, std::span<const double> centroid,
                       double theta) {
  return squared_distance(token, centroid) + theta;
}

std::size_t distinct_rows(const TokenMatrix& tokens) {
  std::set<std::vector<double>> seen;
  for (std::size_t i = 0; i < tokens.rows(); ++i) {
    auto r = tokens.row(i);
    seen.emplace(r.begin(), r.end());
  }
  return seen.size();
}

Mat kmeanspp_seeds(const TokenMatrix& tokens, std::size_t k, Rng& rng) {
  const std::size_t n = tokens.rows();
  if (k == 0 || k > n) throw StructuralError("kmeanspp_seeds: need 1 <= k <= tokens");
  Mat seeds(k, tokens.cols());
  std::vector<bool> chosen(n, false);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());

  auto take = [&](std::size_t s, std::size_t idx) {
    chosen[idx] = true;
    std::copy(tokens.row(idx).begin(), tokens.row(idx).end(), seeds.row(s).begin());
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], squared_distance(tokens.row(i), tokens.row(idx)));
    }
  };

  take(0, static_cast<std::size_t>(rng.below(n)));
  for (std::size_t s = 1; s < k; ++s) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    std::size_t pick = n;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (d2[i] <= 0.0) continue;
        acc += d2[i];
        pick = i;
        if (acc > target) break;
      }
    } else {
      for (std::size_t i = 0; i < n; ++i) {
        if (!chosen[i]) {
          pick = i;
          break;
        }
      }
    }
    take(s, pick);
  }
  return seeds;
}

namespace {

struct Placement {
  std::vector<std::size_t> assignment;
  std::vector<std::size_t> preferred;  // first-choice counts before replacement
};

// Deferred acceptance: tokens walk their preference lists, clusters keep their
// `cap` cheapest applicants.
Placement place_tokens(const Mat& costs, std::size_t cap) {
  const std::size_t n = costs.rows();
  const std::size_t k = costs.cols();

  std::vector<std::vector<std::size_t>> order(n, std::vector<std::size_t>(k));
  Placement out;
  out.assignment.assign(n, kDropped);
  out.preferred.assign(k, 0);
  for (std::size_t i = 0; i < n; ++i) {
    auto& o = order[i];
    std::iota(o.begin(), o.end(), std::size_t{0});
    std::stable_sort(o.begin(), o.end(),
                     [&](std::size_t a, std::size_t b) { return costs(i, a) < costs(i, b); });
    ++out.preferred[o[0]];
  }

  std::vector<std::vector<std::size_t>> members(k);
  std::vector<std::size_t> rank(n, 0);

  for (std::size_t start = 0; start < n; ++start) {
    std::size_t t = start;
    while (t != kDropped) {
      if (rank[t] >= k) {
        out.assignment[t] = kDropped;
        break;
      }
      const std::size_t m = order[t][rank[t]];
      auto& club = members[m];
      if (club.size() < cap) {
        club.push_back(t);
        out.assignment[t] = m;
        t = kDropped;
        continue;
      }
      // Most expensive resident; ties resolved toward the larger token index.
      auto worst = std::max_element(club.begin(), club.end(), [&](std::size_t a, std::size_t b) {
        if (costs(a, m) != costs(b, m)) return costs(a, m) < costs(b, m);
        return a < b;
      });
      if (costs(t, m) < costs(*worst, m)) {
        const std::size_t evicted = *worst;
        *worst = t;
        out.assignment[t] = m;
        out.assignment[evicted] = kDropped;
        ++rank[evicted];
        t = evicted;
      } else {
        ++rank[t];
      }
    }
  }
  return out;
}

ClusterResult run_clustering(const TokenMatrix& tokens, const CapacityConfig& cfg, Mat centroids) {
  const std::size_t n = tokens.rows();
  const std::size_t k = cfg.clusters;
  const std::size_t dims = tokens.cols();

  ClusterResult res;
  res.capacity = cfg.capacity(n);
  res.thetas.assign(k, 0.0);
  res.centroids = std::move(centroids);

  Mat costs(n, k);
  for (std::size_t it = 0; it < cfg.max_iters; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t m = 0; m < k; ++m) {
        costs(i, m) = assignment_cost(tokens.row(i), res.centroids.row(m), res.thetas[m]);
      }
    }
    Placement placed = place_tokens(costs, res.capacity);
    res.assignment = std::move(placed.assignment);

    for (std::size_t m = 0; m < k; ++m) {
      const double over = static_cast<double>(placed.preferred[m]) -
                          static_cast<double>(res.capacity);
      res.thetas[m] = std::max(0.0, res.thetas[m] + cfg.eta_theta * over);
    }

    Mat next(k, dims);
    std::vector<std::size_t> sizes(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t m = res.assignment[i];
      if (m == kDropped) continue;
      axpy(1.0, tokens.row(i), next.row(m));
      ++sizes[m];
    }
    double shift = 0.0;
    for (std::size_t m = 0; m < k; ++m) {
      if (sizes[m] == 0) {
        // Empty cluster keeps its previous position.
        std::copy(res.centroids.row(m).begin(), res.centroids.row(m).end(), next.row(m).begin());
        continue;
      }
      for (double& v : next.row(m)) v /= static_cast<double>(sizes[m]);
      shift = std::max(shift, std::sqrt(squared_distance(next.row(m), res.centroids.row(m))));
    }
    res.centroids = std::move(next);
    res.sizes = std::move(sizes);
    res.iterations = it + 1;
    if (shift < cfg.tol) break;
  }

  res.dropped_count = static_cast<std::size_t>(
      std::count(res.assignment.begin(), res.assignment.end(), kDropped));
  res.objective = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t m = res.assignment[i];
    if (m != kDropped) res.objective += squared_distance(tokens.row(i), res.centroids.row(m));
  }
  return res;
}

void check_inputs(const TokenMatrix& tokens, const CapacityConfig& cfg) {
  cfg.validate();
  if (tokens.rows() < cfg.clusters) {
    throw StructuralError("cluster: " + std::to_string(tokens.rows()) + " tokens for " +
                          std::to_string(cfg.clusters) + " clusters");
  }
  if (tokens.cols() == 0) throw StructuralError("cluster: zero-dimensional tokens");
  if (!all_finite(tokens.flat())) throw StructuralError("cluster: non-finite token value");
  if (cfg.capacity(tokens.rows()) >= tokens.rows()) {
    const std::size_t distinct = distinct_rows(tokens);
    if (distinct < cfg.clusters) throw DegenerateInputError(distinct, cfg.clusters);
  }
}

}  // namespace

ClusterResult cluster(const TokenMatrix& tokens, const CapacityConfig& cfg, Rng& rng) {
  check_inputs(tokens, cfg);
  return run_clustering(tokens, cfg, kmeanspp_seeds(tokens, cfg.clusters, rng));
}

ClusterResult cluster_from(const TokenMatrix& tokens, const CapacityConfig& cfg,
                           Mat initial_centroids) {
  check_inputs(tokens, cfg);
  if (initial_centroids.rows() != cfg.clusters || initial_centroids.cols() != tokens.cols()) {
    throw StructuralError("cluster_from: initial centroids must be clusters x D");
  }
  return run_clustering(tokens, cfg, std::move(initial_centroids));
}

}  // namespace tripsim
