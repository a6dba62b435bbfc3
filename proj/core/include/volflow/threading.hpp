#pragma once

#include <cstdint>
#include <functional>
#include <thread>
#include <vector>

namespace volflow {

// Static-partition parallel loop. Results must be written to per-index
// slots; reductions happen afterwards in index order, so the outcome is
// independent of the thread count.
inline void parallel_for(int64_t n, int threads, const std::function<void(int64_t)>& fn) {
  if (n <= 0) return;
  if (threads < 1) threads = 1;
  if (threads == 1 || n == 1) {
    for (int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  int nt = static_cast<int>(std::min<int64_t>(threads, n));
  std::vector<std::thread> pool;
  pool.reserve(nt);
  for (int t = 0; t < nt; ++t) {
    pool.emplace_back([&, t] {
      for (int64_t i = t; i < n; i += nt) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

inline int hardware_threads() {
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

}  // namespace volflow
