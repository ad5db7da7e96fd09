#pragma once

#include <atomic>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace latproc {

/// Runs fn(0..n-1) across up to `threads` workers. Work items must write to
/// disjoint slots; result order (and therefore any later reduction) is the
/// caller's responsibility. The first exception thrown by a worker is
/// rethrown after all workers join.
inline void parallel_for(int n, int threads,
                         const std::function<void(int)>& fn) {
  if (n <= 0) return;
  if (threads < 1) threads = 1;
  if (threads == 1 || n == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  const int workers = std::min(threads, n);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  std::exception_ptr first_error;
  std::mutex guard;
  std::atomic<int> next{0};
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      while (true) {
        const int i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(guard);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace latproc
