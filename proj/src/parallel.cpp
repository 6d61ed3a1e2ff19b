// Copyright (c) 2026, The ReCo-KD Authors
// SPDX-License-Identifier: Apache-2.0

#include "parallel.hpp"

#include <algorithm>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace recokd::detail {

std::size_t kernel_threads() {
  static const std::size_t threads = [] {
    std::size_t hw = std::max<std::size_t>(1, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("RECO_KD_THREADS")) {
      try {
        long v = std::stol(env);
        if (v >= 1) return std::min<std::size_t>(static_cast<std::size_t>(v), hw);
      } catch (...) {
      }
    }
    return hw;
  }();
  return threads;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn) {
  std::size_t workers = std::min(kernel_threads(), n);
  if (workers <= 1) {
    if (n) fn(0, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 1; w < workers; ++w) {
    std::size_t begin = w * chunk, end = std::min(n, begin + chunk);
    if (begin < end) pool.emplace_back(fn, begin, end);
  }
  fn(0, std::min(n, chunk));
  for (auto& t : pool) t.join();
}

}  // namespace recokd::detail
