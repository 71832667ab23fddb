#pragma once

#include <cstddef>
#include <functional>

namespace exdiff {

/// Process-wide cap on worker threads (the CLI's --threads flag). 0 means hardware concurrency.
void set_max_threads(std::size_t n);
std::size_t max_threads();

/// Runs body(i) for i in [0, n) on up to max_threads() workers.
/// Work is split into contiguous blocks; callers keep results indexed by i
/// so that reductions happen afterwards in a fixed order.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body,
                  std::size_t threads = 0);

}  // namespace exdiff
