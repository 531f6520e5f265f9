#pragma once

#include <cstddef>
#include <functional>

namespace vldet {

// Worker count: VLDET_THREADS if set, else hardware concurrency.
int worker_count();

// Runs fn(begin, end) over a partition of [0, n). Each index is handled by
// exactly one worker, so outputs written per-index are deterministic for any
// thread count. Runs inline when n is small or a single worker is active.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn,
                  std::size_t grain = 1);

}  // namespace vldet
