#pragma once

#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace toposcope {

// Process-wide worker count used by grid loops; 1 means run inline.
int thread_count();
void set_thread_count(int n);

// Runs fn(i) for i in [0, n). Work is split into contiguous chunks, so any
// per-index output written by fn lands in a deterministic slot. The first
// exception (lowest chunk) is rethrown after all workers join.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace toposcope
