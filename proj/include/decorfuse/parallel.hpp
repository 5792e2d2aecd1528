#pragma once

#include <cstddef>
#include <functional>

namespace decorfuse {

/// Hardware concurrency, capped by DECORFUSE_THREADS when set to a positive integer.
int worker_count();

/// Runs fn(i) for i in [0, n) on up to worker_count() threads. Each index runs
/// exactly once; the first exception is rethrown after all workers finish.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace decorfuse
