#pragma once

#include <cstddef>
#include <exception>
#include <limits>

namespace portdec {

/// Runs body(i) for i in [0, n) across OpenMP threads.
///
/// Exceptions cannot cross an OpenMP region, so each one is caught and the one
/// with the smallest index is rethrown afterwards. That keeps error reports
/// independent of thread scheduling.
template <class Body>
void parallel_for(std::size_t n, Body&& body) {
  std::exception_ptr first;
  std::size_t first_index = std::numeric_limits<std::size_t>::max();
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) {
    try {
      body(i);
    } catch (...) {
#pragma omp critical(portdec_parallel_error)
      if (i < first_index) {
        first_index = i;
        first = std::current_exception();
      }
    }
  }
  if (first) std::rethrow_exception(first);
}

}  // namespace portdec
