// SPDX-FileCopyrightText: 2026 matbrw contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <vector>

namespace matbrw {

// Worker count. MATBRW_THREADS in the environment takes precedence over the
// programmatic setting; 0 means hardware concurrency.
unsigned thread_count();
void set_thread_count(unsigned n);

// Runs task(i) for i in [0, count). Tasks are claimed dynamically, so task
// bodies must write only to slots they own. Nested calls run inline.
void run_tasks(std::size_t count, const std::function<void(std::size_t)>& task);

// Splits [0, n) into fixed chunks whose boundaries depend only on n and grain,
// so per-chunk partial results combined in chunk order do not depend on the
// worker count.
template <class Result, class Body>
std::vector<Result> map_chunks(std::size_t n, std::size_t grain, Body&& body) {
  grain = std::max<std::size_t>(grain, 1);
  const std::size_t chunks = (n + grain - 1) / grain;
  std::vector<Result> out(chunks);
  run_tasks(chunks, [&](std::size_t c) {
    const std::size_t begin = c * grain;
    const std::size_t end = std::min(n, begin + grain);
    out[c] = body(begin, end);
  });
  return out;
}

template <class Body>
void parallel_for(std::size_t n, std::size_t grain, Body&& body) {
  grain = std::max<std::size_t>(grain, 1);
  const std::size_t chunks = (n + grain - 1) / grain;
  run_tasks(chunks, [&](std::size_t c) {
    const std::size_t begin = c * grain;
    body(begin, std::min(n, begin + grain));
  });
}

}  // namespace matbrw
