#pragma once

#include <cstddef>
#include <functional>

namespace tafe {

// Process-wide worker cap for the data-parallel kernels. Defaults to 1.
void set_num_threads(std::size_t n);
std::size_t num_threads();

// Runs body(i) for i in [0, count). Work items are split into contiguous
// chunks, one per worker; each item is processed by exactly one worker, so
// kernels that write disjoint outputs per item stay deterministic.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

}  // namespace tafe
