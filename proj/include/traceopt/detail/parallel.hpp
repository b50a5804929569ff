#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <thread>
#include <vector>

namespace traceopt {

namespace detail {
inline std::atomic<int>& thread_count_slot() {
  static std::atomic<int> count{1};
  return count;
}
}  // namespace detail

/// Number of worker threads used by the batched kernels. Defaults to 1.
inline int num_threads() { return detail::thread_count_slot().load(); }

inline void set_num_threads(int n) {
  detail::thread_count_slot().store(std::max(1, n));
}

namespace detail {

/// Static range split: f(begin, end) on contiguous chunks. Every chunk
/// writes a disjoint slice of the output, so results are identical for any
/// thread count.
template <class F>
void parallel_for(std::int64_t n, F&& f) {
  const int threads = std::min<std::int64_t>(num_threads(), n);
  if (threads <= 1 || n < 1024) {
    if (n > 0) f(std::int64_t{0}, n);
    return;
  }
  const std::int64_t chunk = (n + threads - 1) / threads;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads));
  for (int t = 0; t < threads; ++t) {
    const std::int64_t begin = t * chunk;
    const std::int64_t end = std::min<std::int64_t>(begin + chunk, n);
    if (begin >= end) break;
    pool.emplace_back([&f, begin, end] { f(begin, end); });
  }
  for (auto& th : pool) th.join();
}

}  // namespace detail
}  // namespace traceopt
