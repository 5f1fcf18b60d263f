#pragma once

#include <cstddef>
#include <functional>

namespace rgr {

// Worker cap from RGR_THREADS (default: hardware concurrency, at least 1).
std::size_t worker_count();

// Runs body(i) for i in [0, n) on up to worker_count() threads. Each index is
// visited exactly once; callers write results into per-index slots and reduce
// afterwards in index order, so output never depends on the thread count.
// The first exception thrown by any body is rethrown on the caller.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

// Flushes float denormals to zero on the current thread while alive. Used on
// single-precision paths only; double-precision verification runs without it.
class FlushDenormals {
 public:
  FlushDenormals();
  ~FlushDenormals();
  FlushDenormals(const FlushDenormals&) = delete;
  FlushDenormals& operator=(const FlushDenormals&) = delete;

 private:
  unsigned saved_ = 0;
};

}  // namespace rgr
