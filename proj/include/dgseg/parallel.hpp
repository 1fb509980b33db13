#pragma once

// Scene-level parallelism. Work items are fully independent (one scene's
// training never reads another's state), so a static block partition is
// enough and results cannot depend on the thread count.

#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace dgseg {

inline void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  if (n <= 0) return;
  if (threads < 1) threads = 1;
  if (threads == 1 || n == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  const int T = std::min(threads, n);
  std::vector<std::thread> pool;
  std::exception_ptr first_error;
  std::mutex err_mu;
  for (int t = 0; t < T; ++t) {
    pool.emplace_back([&, t] {
      const int lo = static_cast<int>(static_cast<long>(n) * t / T);
      const int hi = static_cast<int>(static_cast<long>(n) * (t + 1) / T);
      for (int i = lo; i < hi; ++i) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lk(err_mu);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

} // namespace dgseg
