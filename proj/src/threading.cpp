#include "luxforge/threading.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

#include "luxforge/common.hpp"

namespace luxforge {

namespace {

std::atomic<int> g_workers{0};  // 0 = not resolved yet

int resolve_default() {
  if (const char* env = std::getenv("LUXFORGE_THREADS")) {
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end != env && v >= 1) return static_cast<int>(std::min<long>(v, 256));
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

}  // namespace

int worker_count() {
  int w = g_workers.load(std::memory_order_relaxed);
  if (w == 0) {
    w = resolve_default();
    g_workers.store(w, std::memory_order_relaxed);
  }
  return w;
}

void set_worker_count(int n) {
  if (n < 1) throw value_error(cat("set_worker_count: need n >= 1, got ", n));
  g_workers.store(n, std::memory_order_relaxed);
}

void parallel_for(int64_t begin, int64_t end,
                  const std::function<void(int64_t)>& fn) {
  int64_t total = end - begin;
  if (total <= 0) return;
  int workers = static_cast<int>(std::min<int64_t>(worker_count(), total));
  if (workers <= 1) {
    for (int64_t i = begin; i < end; ++i) fn(i);
    return;
  }

  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> threads;
  threads.reserve(workers);
  int64_t chunk = (total + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    int64_t lo = begin + w * chunk;
    int64_t hi = std::min(end, lo + chunk);
    if (lo >= hi) break;
    threads.emplace_back([&, lo, hi] {
      try {
        for (int64_t i = lo; i < hi; ++i) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> g(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace luxforge
