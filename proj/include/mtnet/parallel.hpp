#pragma once

#include <cstddef>
#include <exception>
#include <vector>

namespace mtnet {

// Runs body(i) for i in [0, n) across OpenMP threads. An exception thrown by
// any iteration is captured and the one from the lowest index is rethrown
// after the loop, so failures are reported deterministically.
template <class Body>
void parallel_for(std::size_t n, Body&& body) {
  std::vector<std::exception_ptr> errors(n);
  bool failed = false;
#pragma omp parallel for schedule(dynamic, 1) reduction(|| : failed)
  for (std::size_t i = 0; i < n; ++i) {
    try {
      body(i);
    } catch (...) {
      errors[i] = std::current_exception();
      failed = true;
    }
  }
  if (failed)
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
}

}  // namespace mtnet
