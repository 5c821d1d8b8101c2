#pragma once

#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

namespace swingctl {

/// Worker count, controlled only by SWINGCTL_THREADS (default 1).
inline int thread_count() {
  if (const char* env = std::getenv("SWINGCTL_THREADS")) {
    const int v = std::atoi(env);
    if (v >= 1) return v;
  }
  return 1;
}

/// Runs body(0..count-1). body(i) must write only to per-index slots so the
/// result is independent of the schedule; reductions happen afterwards in
/// index order.
template <class F>
void parallel_for(int count, F&& body) {
  const int workers = std::min(thread_count(), count);
  if (workers <= 1) {
    for (int i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (int i; (i = next.fetch_add(1)) < count;) body(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace swingctl
