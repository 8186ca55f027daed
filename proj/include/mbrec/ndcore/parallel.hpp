#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <thread>
#include <vector>

namespace mbrec {

namespace detail {
inline std::atomic<std::size_t>& thread_setting() {
  static std::atomic<std::size_t> threads{std::max(1u, std::thread::hardware_concurrency())};
  return threads;
}
}  // namespace detail

inline void set_threads(std::size_t n) { detail::thread_setting() = std::max<std::size_t>(1, n); }
inline std::size_t threads() { return detail::thread_setting(); }

// Runs fn(i) for i in [begin, end). Work is split into contiguous blocks, so
// any fn that writes only to slot i gives bitwise-identical results for every
// thread count.
template <typename Fn>
void parallel_for(std::size_t begin, std::size_t end, std::size_t min_block, Fn&& fn) {
  const std::size_t n = end > begin ? end - begin : 0;
  const std::size_t workers = std::min(threads(), n / std::max<std::size_t>(1, min_block));
  if (workers <= 1) {
    for (std::size_t i = begin; i < end; ++i) fn(i);
    return;
  }
  const std::size_t block = (n + workers - 1) / workers;
  std::vector<std::jthread> pool;
  pool.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) {
    const std::size_t lo = begin + w * block;
    const std::size_t hi = std::min(end, lo + block);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn] {
      for (std::size_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (std::size_t i = begin; i < std::min(end, begin + block); ++i) fn(i);
}

}  // namespace mbrec
