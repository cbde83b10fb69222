#pragma once

#include <cstddef>
#include <functional>

namespace sen4x {

/// Worker count for parallel_for. Defaults to SEN4X_THREADS if set, else
/// the hardware concurrency.
int num_threads();
void set_num_threads(int n);

/// Runs fn(i) for i in [0, n), split into contiguous chunks across threads.
/// The first exception thrown by any chunk is rethrown on the caller.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace sen4x
