#pragma once

#include <cstddef>
#include <functional>

namespace dmm {

// Worker count used by per-sample loops in the layers. Defaults to 1.
// Results never depend on this value: workers write disjoint outputs and
// any reduction happens afterwards in index order.
void set_thread_count(std::size_t threads);
std::size_t thread_count();

// Calls body(i) for i in [0, n), splitting contiguous ranges over workers.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace dmm
