#pragma once

#include <cstddef>
#include <functional>

namespace stegosan {

/// Worker count: STEGOSAN_THREADS if set (>= 1), else hardware concurrency.
std::size_t thread_count();

/// Runs body(i) for i in [0, n). Work is split into contiguous ranges; the
/// caller must make body's effects independent of which thread runs it.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace stegosan
