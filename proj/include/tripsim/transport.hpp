#pragma once

#include <cstddef>
#include <vector>

#include "tripsim/tensor.hpp"

namespace tripsim {

/// Square cluster-by-expert cost matrix.
using CostMatrix = Mat;

/// One-to-one cluster -> expert map: perm[i] is the expert serving cluster i.
struct Assignment {
  std::vector<std::size_t> perm;

  bool operator==(const Assignment&) const = default;
};

/// Sum of cost(i, perm[i]) taken in row order.
double total_cost(const CostMatrix& cost, const Assignment& a);

bool is_permutation(const Assignment& a, std::size_t n);

/// Exact minimum-cost perfect assignment in O(M^3) (shortest augmenting paths
/// with row/column potentials). Among optimal permutations the lexicographically
/// smallest is returned: rows are fixed in order to their lowest-index column
/// that still admits a perfect matching on zero-reduced-cost edges.
/// Throws StructuralError for non-square, empty or non-finite input.
Assignment hungarian(const CostMatrix& cost);

/// Enumerates all M! permutations in lexicographic order and keeps the first
/// minimiser. Throws StructuralError when M > 8.
Assignment brute_force(const CostMatrix& cost);

}  // namespace tripsim
