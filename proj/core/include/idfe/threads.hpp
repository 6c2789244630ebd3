#pragma once

#include <cstdint>
#include <functional>

namespace idfe {

// Worker cap: min(hardware_concurrency, IDFE_THREADS if set). At least 1.
int max_threads();

// Runs fn(i) for i in [0, n) over a static partition of `threads` workers.
// Each index is independent, so results are identical for any thread count.
void parallel_for(std::int64_t n, int threads, const std::function<void(std::int64_t)>& fn);

}  // namespace idfe
