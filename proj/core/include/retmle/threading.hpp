#pragma once

#include <algorithm>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace retmle {

inline int resolve_threads(int requested) {
  if (requested > 0) return requested;
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

inline int worker_count(int n, int requested) {
  return std::min(resolve_threads(requested), std::max(1, n));
}

inline int chunk_size(int n, int workers) { return (n + workers - 1) / workers; }

/// Runs fn(begin, end) over a contiguous partition of [0, n). Chunk
/// boundaries depend only on (n, requested), so writes into preallocated
/// per-index slots stay deterministic; worker w handles
/// [w*chunk, min(n, (w+1)*chunk)). The first exception thrown by a worker is
/// rethrown on the calling thread.
inline void parallel_for(int n, int requested, const std::function<void(int, int)>& fn) {
  const int workers = worker_count(n, requested);
  if (workers <= 1 || n <= 1) {
    fn(0, n);
    return;
  }
  const int chunk = chunk_size(n, workers);
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<size_t>(workers));
  pool.reserve(static_cast<size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    const int begin = w * chunk;
    const int end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, &errors, w, begin, end] {
      try {
        fn(begin, end);
      } catch (...) {
        errors[static_cast<size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (const auto& err : errors) {
    if (err) std::rethrow_exception(err);
  }
}

}  // namespace retmle
