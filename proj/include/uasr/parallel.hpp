#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace uasr {

inline int num_threads() {
  static int n = [] {
    const char* e = std::getenv("UASR_THREADS");
    if (e) return std::max(1, std::atoi(e));
    unsigned hc = std::thread::hardware_concurrency();
    return hc ? int(hc) : 1;
  }();
  return n;
}

// Runs fn(chunk_index, begin, end) over fixed-size chunks of [0, n).
// Chunk boundaries depend only on n, never on the thread count, so any
// per-chunk accumulators can be reduced in chunk order for results that
// are bit-identical regardless of parallelism.
inline void parallel_chunks(size_t n, size_t chunk_size,
                            const std::function<void(size_t, size_t, size_t)>& fn) {
  if (n == 0) return;
  size_t num_chunks = (n + chunk_size - 1) / chunk_size;
  int threads = std::min<int>(num_threads(), int(num_chunks));
  if (threads <= 1) {
    for (size_t c = 0; c < num_chunks; ++c)
      fn(c, c * chunk_size, std::min(n, (c + 1) * chunk_size));
    return;
  }
  std::atomic<size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(size_t(threads));
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (;;) {
        size_t c = next.fetch_add(1);
        if (c >= num_chunks) return;
        fn(c, c * chunk_size, std::min(n, (c + 1) * chunk_size));
      }
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace uasr
