#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "tripsim/clustering.hpp"
#include "tripsim/keys.hpp"
#include "tripsim/rng.hpp"
#include "tripsim/tensor.hpp"
#include "tripsim/transport.hpp"

namespace tripsim {

/// One learnable prompt: L token vectors of dimension D (rows).
using PromptExpert = Mat;
using ExpertSet = std::vector<PromptExpert>;

/// How tokens reach experts.
enum class RoutingMode {
  static_keys,    ///< cluster, then match centroids to the fixed keys
  expert_keys,    ///< cluster, then match centroids to the current experts (mean prompt token)
  random_tokens,  ///< no clustering: each token picks a uniformly random expert
};

std::string to_string(RoutingMode mode);

struct RouterOptions {
  CapacityConfig capacity;
  RoutingMode mode = RoutingMode::static_keys;
};

struct RoutedPrompt {
  Mat prompt;                  ///< sum_m pi_m * expert_m
  std::vector<double> weights; ///< pi, indexed by expert
  Assignment assignment;       ///< cluster -> expert
  ClusterResult clusters;
};

/// Throws StructuralError unless all experts share one non-empty finite shape.
void validate_experts(const ExpertSet& experts);

/// Cost entry (i, j) = 1 - cosine(centroid_i, key_j). Rows of empty or zero-norm
/// clusters cost 2 against every key; a zero-norm key column costs 1.
CostMatrix build_cost(const Mat& centroids, std::span<const std::size_t> sizes, const Mat& keys);

/// pi_m = |cluster assigned to m| / (sum of cluster sizes). All zeros when
/// every token was dropped.
std::vector<double> mixture_weights(std::span<const std::size_t> sizes, const Assignment& assignment);

/// Element-wise sum_m weights[m] * experts[m].
Mat synthesize_prompt(const ExpertSet& experts, std::span<const double> weights);

/// Key matrix used when routing against the experts themselves: each row is
/// the mean prompt token of one expert.
Mat expert_centres(const ExpertSet& experts);

/// Cluster -> cost -> Hungarian -> weights -> prompt for one image.
/// Throws InvariantViolation if no token survives clustering.
RoutedPrompt route(const TokenMatrix& tokens, const ExpertSet& experts, const StaticKeySet& keys,
                   const RouterOptions& options, Rng& rng);

}  // namespace tripsim
