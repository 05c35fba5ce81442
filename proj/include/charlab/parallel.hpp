#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace charlab {

// Worker count from CHARLAB_JOBS, else the hardware concurrency (at least 1).
int default_jobs();

// Runs fn(i) for i in [0, n) on up to `jobs` threads. Each thread takes a
// contiguous chunk, so results written by index do not depend on scheduling.
// The first exception thrown by any worker is rethrown on the caller.
template <typename F>
void parallel_for(size_t n, int jobs, F&& fn) {
  const size_t workers = std::min(n, static_cast<size_t>(std::max(1, jobs)));
  if (workers <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> threads;
  threads.reserve(workers);
  for (size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&, w] {
      const size_t begin = n * w / workers;
      const size_t end = n * (w + 1) / workers;
      try {
        for (size_t i = begin; i < end; ++i) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace charlab
