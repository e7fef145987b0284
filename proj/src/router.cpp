#include "tripsim/router.hpp"

#include <algorithm>
#include <numeric>

#include "tripsim/errors.hpp"

namespace tripsim {

std::string to_string(RoutingMode mode) {
  switch (mode) {
    case RoutingMode::static_keys: return "static_keys";
    case RoutingMode::expert_keys: return "expert_keys";
    case RoutingMode::random_tokens: return "random_tokens";
  }
  return "static_keys";
}

void validate_experts(const ExpertSet& experts) {
  if (experts.empty()) throw StructuralError("experts: empty set");
  const Mat& first = experts.front();
  if (first.rows() == 0 || first.cols() == 0) throw StructuralError("experts: empty prompt");
  for (std::size_t m = 0; m < experts.size(); ++m) {
    if (!experts[m].same_shape(first)) {
      throw StructuralError("experts: expert " + std::to_string(m) + " shape differs from expert 0");
    }
    if (!all_finite(experts[m].flat())) {
      throw StructuralError("experts: expert " + std::to_string(m) + " has non-finite entries");
    }
  }
}

CostMatrix build_cost(const Mat& centroids, std::span<const std::size_t> sizes, const Mat& keys) {
  if (centroids.rows() != keys.rows() || sizes.size() != centroids.rows()) {
    throw StructuralError("build_cost: centroid, size and key counts must match");
  }
  if (centroids.cols() != keys.cols()) throw StructuralError("build_cost: dimension mismatch");
  const std::size_t m = centroids.rows();
  CostMatrix cost(m, m);
  std::vector<double> key_norms(m);
  for (std::size_t j = 0; j < m; ++j) key_norms[j] = norm(keys.row(j));
  for (std::size_t i = 0; i < m; ++i) {
    const bool usable = sizes[i] > 0 && norm(centroids.row(i)) > 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      if (!usable) {
        cost(i, j) = 2.0;
      } else if (!(key_norms[j] > 0.0)) {
        cost(i, j) = 1.0;
      } else {
        cost(i, j) = 1.0 - cosine(centroids.row(i), keys.row(j));
      }
    }
  }
  return cost;
}

std::vector<double> mixture_weights(std::span<const std::size_t> sizes, const Assignment& assignment) {
  if (assignment.perm.size() != sizes.size()) {
    throw StructuralError("mixture_weights: assignment length mismatch");
  }
  std::vector<double> pi(sizes.size(), 0.0);
  const std::size_t total = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
  if (total == 0) return pi;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    pi[assignment.perm[i]] = static_cast<double>(sizes[i]) / static_cast<double>(total);
  }
  return pi;
}

Mat synthesize_prompt(const ExpertSet& experts, std::span<const double> weights) {
  if (weights.size() != experts.size()) {
    throw StructuralError("synthesize_prompt: weight count differs from expert count");
  }
  Mat prompt(experts.front().rows(), experts.front().cols());
  for (std::size_t m = 0; m < experts.size(); ++m) {
    if (weights[m] != 0.0) axpy(weights[m], experts[m].flat(), prompt.flat());
  }
  return prompt;
}

Mat expert_centres(const ExpertSet& experts) {
  Mat centres(experts.size(), experts.front().cols());
  for (std::size_t m = 0; m < experts.size(); ++m) {
    const Vec mean = row_mean(experts[m]);
    std::copy(mean.begin(), mean.end(), centres.row(m).begin());
  }
  return centres;
}

namespace {

ClusterResult random_partition(const TokenMatrix& tokens, std::size_t experts, Rng& rng) {
  ClusterResult res;
  const std::size_t n = tokens.rows();
  res.assignment.resize(n);
  res.sizes.assign(experts, 0);
  res.thetas.assign(experts, 0.0);
  res.centroids = Mat(experts, tokens.cols());
  res.capacity = n;
  for (std::size_t i = 0; i < n; ++i) {
    const auto m = static_cast<std::size_t>(rng.below(experts));
    res.assignment[i] = m;
    ++res.sizes[m];
    axpy(1.0, tokens.row(i), res.centroids.row(m));
  }
  for (std::size_t m = 0; m < experts; ++m) {
    if (res.sizes[m] == 0) continue;
    for (double& v : res.centroids.row(m)) v /= static_cast<double>(res.sizes[m]);
  }
  for (std::size_t i = 0; i < n; ++i) {
    res.objective += squared_distance(tokens.row(i), res.centroids.row(res.assignment[i]));
  }
  return res;
}

}  // namespace

RoutedPrompt route(const TokenMatrix& tokens, const ExpertSet& experts, const StaticKeySet& keys,
                   const RouterOptions& options, Rng& rng) {
  validate_experts(experts);
  const std::size_t m = experts.size();
  if (keys.count() != m) {
    throw StructuralError("route: " + std::to_string(keys.count()) + " keys for " +
                          std::to_string(m) + " experts");
  }
  if (keys.dims() != tokens.cols()) throw StructuralError("route: key/token dimension mismatch");

  RoutedPrompt out;
  if (options.mode == RoutingMode::random_tokens) {
    out.clusters = random_partition(tokens, m, rng);
    out.assignment.perm.resize(m);
    std::iota(out.assignment.perm.begin(), out.assignment.perm.end(), std::size_t{0});
  } else {
    CapacityConfig cap = options.capacity;
    cap.clusters = m;
    out.clusters = cluster(tokens, cap, rng);
    const Mat anchor = options.mode == RoutingMode::static_keys ? keys.keys : expert_centres(experts);
    if (anchor.cols() != tokens.cols()) throw StructuralError("route: expert/token dimension mismatch");
    out.assignment = hungarian(build_cost(out.clusters.centroids, out.clusters.sizes, anchor));
  }

  if (out.clusters.assigned_count() == 0) {
    throw InvariantViolation("route: every token was dropped");
  }
  out.weights = mixture_weights(out.clusters.sizes, out.assignment);
  out.prompt = synthesize_prompt(experts, out.weights);
  return out;
}

}  // namespace tripsim
