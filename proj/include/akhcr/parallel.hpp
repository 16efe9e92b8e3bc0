#pragma once

#include <atomic>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace akhcr {

namespace detail {
inline std::atomic<int>& worker_count_slot() {
  static std::atomic<int> slot{0};
  return slot;
}
}  // namespace detail

inline int worker_count() {
  int n = detail::worker_count_slot().load(std::memory_order_relaxed);
  if (n <= 0) {
    n = static_cast<int>(std::thread::hardware_concurrency());
    if (n <= 0) n = 1;
  }
  return n;
}

// 0 restores the hardware default
inline void set_worker_count(int n) {
  detail::worker_count_slot().store(n, std::memory_order_relaxed);
}

// Runs fn(chunk_begin, chunk_end) over [begin, end) in chunks of `grain`.
// Chunk boundaries depend only on `grain`, never on the worker count, so as
// long as chunks write disjoint data the result is bit-identical for any
// number of workers.
inline void parallel_for(std::int64_t begin, std::int64_t end, std::int64_t grain,
                         const std::function<void(std::int64_t, std::int64_t)>& fn) {
  if (end <= begin) return;
  if (grain < 1) grain = 1;
  const std::int64_t nchunks = (end - begin + grain - 1) / grain;
  const int workers = static_cast<int>(std::min<std::int64_t>(worker_count(), nchunks));

  if (workers <= 1) {
    for (std::int64_t c = 0; c < nchunks; ++c) {
      const std::int64_t lo = begin + c * grain;
      fn(lo, std::min(end, lo + grain));
    }
    return;
  }

  std::atomic<std::int64_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;

  auto run = [&] {
    for (;;) {
      const std::int64_t c = next.fetch_add(1, std::memory_order_relaxed);
      if (c >= nchunks) break;
      const std::int64_t lo = begin + c * grain;
      try {
        fn(lo, std::min(end, lo + grain));
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };

  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers - 1));
  for (int i = 1; i < workers; ++i) pool.emplace_back(run);
  run();
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace akhcr
