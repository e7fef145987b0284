#pragma once

#include <cstddef>
#include <functional>

namespace tripsim {

/// Worker cap: TRIP_SIM_THREADS when set to a positive integer, otherwise the
/// hardware concurrency (at least 1).
std::size_t worker_threads();

/// Runs fn(i) for i in [0, n) on up to worker_threads() threads. Each index is
/// visited exactly once; callers write results into per-index slots and reduce
/// afterwards in index order.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace tripsim
