#pragma once

#include <atomic>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace hyperfield {

inline int default_thread_count() {
  if (const char* env = std::getenv("HYPERFIELD_THREADS")) {
    int n = std::atoi(env);
    if (n > 0) return n;
  }
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : int(hc);
}

// Runs fn(chunk) for chunk in [0, n_chunks). Chunks are independent units of
// work; callers that need determinism must make each chunk self-contained and
// combine results in chunk order afterwards. Thread count never affects which
// chunk computes what.
inline void parallel_chunks(int n_chunks, int n_threads, const std::function<void(int)>& fn) {
  if (n_chunks <= 0) return;
  if (n_threads <= 0) n_threads = default_thread_count();
  n_threads = std::min(n_threads, n_chunks);
  if (n_threads <= 1) {
    for (int c = 0; c < n_chunks; ++c) fn(c);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto worker = [&] {
    for (;;) {
      int c = next.fetch_add(1);
      if (c >= n_chunks) return;
      try {
        fn(c);
      } catch (...) {
        std::lock_guard<std::mutex> lk(error_mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(n_threads - 1);
  for (int i = 1; i < n_threads; ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace hyperfield
