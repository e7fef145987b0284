#include "tripsim/transport.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "tripsim/errors.hpp"

namespace tripsim {

namespace {

void check_square(const CostMatrix& cost) {
  if (cost.rows() == 0) throw StructuralError("assignment: empty cost matrix");
  if (cost.rows() != cost.cols()) {
    throw StructuralError("assignment: cost matrix is " + std::to_string(cost.rows()) + "x" +
                          std::to_string(cost.cols()) + ", expected square");
  }
  if (!all_finite(cost.flat())) throw StructuralError("assignment: non-finite cost entry");
}

// Kuhn augmenting path restricted to allowed edges and free columns.
bool augment(std::size_t row, const std::vector<std::vector<std::size_t>>& adj,
             std::vector<std::size_t>& col_owner, std::vector<bool>& seen,
             const std::vector<bool>& col_blocked) {
  constexpr std::size_t none = std::numeric_limits<std::size_t>::max();
  for (std::size_t c : adj[row]) {
    if (col_blocked[c] || seen[c]) continue;
    seen[c] = true;
    if (col_owner[c] == none || augment(col_owner[c], adj, col_owner, seen, col_blocked)) {
      col_owner[c] = row;
      return true;
    }
  }
  return false;
}

// Can rows [first, n) be matched into unblocked columns using `adj`?
bool completes(std::size_t first, const std::vector<std::vector<std::size_t>>& adj,
               const std::vector<bool>& col_blocked) {
  constexpr std::size_t none = std::numeric_limits<std::size_t>::max();
  const std::size_t n = adj.size();
  std::vector<std::size_t> owner(n, none);
  for (std::size_t r = first; r < n; ++r) {
    std::vector<bool> seen(n, false);
    if (!augment(r, adj, owner, seen, col_blocked)) return false;
  }
  return true;
}

}  // namespace

double total_cost(const CostMatrix& cost, const Assignment& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.perm.size(); ++i) s += cost(i, a.perm[i]);
  return s;
}

bool is_permutation(const Assignment& a, std::size_t n) {
  if (a.perm.size() != n) return false;
  std::vector<bool> hit(n, false);
  for (std::size_t j : a.perm) {
    if (j >= n || hit[j]) return false;
    hit[j] = true;
  }
  return true;
}

Assignment hungarian(const CostMatrix& cost) {
  check_square(cost);
  const std::size_t n = cost.rows();
  constexpr double inf = std::numeric_limits<double>::infinity();

  // 1-based potentials; column 0 is the virtual root of each augmenting search.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> match(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    match[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = match[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  // Every optimal assignment uses only edges that are tight under the optimal
  // duals, so the lexicographic optimum is the lexicographically smallest
  // perfect matching of the tight-edge graph.
  double scale = 1.0;
  for (double c : cost.flat()) scale = std::max(scale, std::abs(c));
  const double eps = 1e-12 * scale * static_cast<double>(n);
  std::vector<std::vector<std::size_t>> tight(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (cost(i, j) - u[i + 1] - v[j + 1] <= eps) tight[i].push_back(j);
    }
  }

  Assignment out;
  out.perm.assign(n, 0);
  std::vector<bool> blocked(n, false);
  std::vector<std::vector<std::size_t>> adj = tight;
  for (std::size_t i = 0; i < n; ++i) {
    bool fixed = false;
    for (std::size_t j : tight[i]) {
      if (blocked[j]) continue;
      blocked[j] = true;
      if (completes(i + 1, adj, blocked)) {
        out.perm[i] = j;
        adj[i] = {j};
        fixed = true;
        break;
      }
      blocked[j] = false;
    }
    if (!fixed) {
      // Only reachable if rounding hid a tight edge; fall back to the solver's matching.
      Assignment direct;
      direct.perm.assign(n, 0);
      for (std::size_t j = 1; j <= n; ++j) direct.perm[match[j] - 1] = j - 1;
      return direct;
    }
  }
  return out;
}

Assignment brute_force(const CostMatrix& cost) {
  check_square(cost);
  const std::size_t n = cost.rows();
  if (n > 8) throw StructuralError("brute_force: M=" + std::to_string(n) + " exceeds limit 8");
  Assignment cur;
  cur.perm.resize(n);
  std::iota(cur.perm.begin(), cur.perm.end(), std::size_t{0});
  Assignment best = cur;
  double best_cost = total_cost(cost, cur);
  while (std::next_permutation(cur.perm.begin(), cur.perm.end())) {
    const double c = total_cost(cost, cur);
    // Near-equal totals are treated as ties so the earlier permutation wins.
    if (c < best_cost - 1e-12 * (1.0 + std::abs(best_cost))) {
      best_cost = c;
      best = cur;
    }
  }
  return best;
}

}  // namespace tripsim
