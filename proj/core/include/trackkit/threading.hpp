#pragma once

#include <functional>

namespace trackkit {

// Worker count for parallel regions: TRACKKIT_THREADS if set, otherwise the
// hardware concurrency. Always >= 1.
int thread_count();

// Runs fn(i) for i in [0, n). Results must be written to disjoint slots so
// that the outcome is independent of the schedule; reductions are the
// caller's job and must run in index order.
void parallel_for(int n, const std::function<void(int)>& fn);

}  // namespace trackkit
