#pragma once

#include <cstdint>
#include <functional>

namespace detnet {

// Number of worker threads operators may use. Defaults to the hardware
// concurrency, capped by the DNET_THREADS environment variable (read once).
int max_threads();

// Runs fn(begin, end) over a partition of [0, count). Falls back to a single
// inline call when count is small or only one thread is available. Callers
// must ensure the chunks write disjoint outputs; results are then identical
// for any thread count.
void parallel_for(std::int64_t count,
                  const std::function<void(std::int64_t, std::int64_t)>& fn,
                  std::int64_t min_per_thread = 1);

}  // namespace detnet
