#pragma once

#include <cstddef>
#include <functional>

namespace rsosplat {

/// Process-wide worker cap; 0 or negative selects hardware concurrency.
void set_thread_count(int threads);
int thread_count();

/// Runs body(i) for i in [0, count). Work items are claimed dynamically, so
/// callers must write results into per-item slots; any reduction happens
/// afterwards in index order, which keeps results independent of the
/// thread count.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

} // namespace rsosplat
