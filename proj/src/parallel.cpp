// SPDX-FileCopyrightText: 2026 matbrw contributors
// SPDX-License-Identifier: Apache-2.0
#include "matbrw/parallel.hpp"

#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>

namespace matbrw {
namespace {

std::atomic<unsigned> g_requested{0};
thread_local bool t_inside_pool = false;

unsigned env_threads() {
  const char* v = std::getenv("MATBRW_THREADS");
  if (!v || !*v) return 0;
  try {
    const long n = std::stol(v);
    return n > 0 ? static_cast<unsigned>(n) : 0;
  } catch (...) {
    return 0;
  }
}

}  // namespace

unsigned thread_count() {
  unsigned n = env_threads();
  if (n == 0) n = g_requested.load();
  if (n == 0) n = std::max(1u, std::thread::hardware_concurrency());
  return n;
}

void set_thread_count(unsigned n) { g_requested.store(n); }

void run_tasks(std::size_t count, const std::function<void(std::size_t)>& task) {
  if (count == 0) return;
  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(thread_count(), count));
  if (workers <= 1 || t_inside_pool) {
    for (std::size_t i = 0; i < count; ++i) task(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    t_inside_pool = true;
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count) break;
      try {
        task(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        next.store(count);
      }
    }
    t_inside_pool = false;
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (unsigned w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace matbrw
