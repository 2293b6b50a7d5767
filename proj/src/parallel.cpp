#include "rdns/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace rdns {

namespace {
std::atomic<std::size_t> g_threads{1};
}

void set_worker_threads(std::size_t n) { g_threads = std::max<std::size_t>(n, 1); }

std::size_t worker_threads() { return g_threads; }

void configure_threads_from_env() {
  const char* env = std::getenv("RDNS_THREADS");
  if (env == nullptr) return;
  try {
    const long v = std::stol(env);
    if (v > 0) set_worker_threads(static_cast<std::size_t>(v));
  } catch (const std::exception&) {
    // Ignore malformed values; the default of one worker stays in effect.
  }
}

void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(worker_threads(), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (std::size_t t = 0; t < workers; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < count; i += workers) fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  pool.clear();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace rdns
