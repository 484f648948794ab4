// Internal work-sharing helper. Results must not depend on scheduling; every
// call site writes to disjoint slots keyed by the item index.
#pragma once

#include <atomic>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace ear::detail {

inline void run_parallel(std::int64_t count, std::int64_t workers,
                         const std::function<void(std::int64_t)>& fn) {
  const std::int64_t n_threads = std::min<std::int64_t>(
      std::max<std::int64_t>(workers, 1), std::max<std::int64_t>(count, 1));
  if (n_threads <= 1) {
    for (std::int64_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::int64_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> threads;
  threads.reserve(static_cast<std::size_t>(n_threads));
  for (std::int64_t t = 0; t < n_threads; ++t) {
    threads.emplace_back([&]() {
      for (;;) {
        const std::int64_t i = next.fetch_add(1);
        if (i >= count) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& th : threads) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace ear::detail
