#pragma once

#include <cstdint>
#include <functional>

namespace luxforge {

// Worker count used for coarse-grained parallel work (corpus generation,
// independent runs). Resolution order: explicit set_worker_count() call,
// the LUXFORGE_THREADS environment variable, then hardware concurrency.
int worker_count();
void set_worker_count(int n);

// Runs fn(i) for i in [begin, end). Work is split into contiguous chunks so
// results are identical for any worker count as long as iterations only
// write to disjoint state. With one worker this is a plain loop.
void parallel_for(int64_t begin, int64_t end,
                  const std::function<void(int64_t)>& fn);

}  // namespace luxforge
