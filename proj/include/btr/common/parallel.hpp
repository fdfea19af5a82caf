#pragma once

#include <exception>

namespace btr {

/// Runs fn(i) for i in [0, n), across OpenMP threads when `parallel` is
/// set. The first exception thrown by any iteration is rethrown after the
/// loop.
template <class Fn>
void parallel_for(long n, bool parallel, Fn&& fn) {
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic) if (parallel)
  for (long i = 0; i < n; ++i) {
    try {
      fn(i);
    } catch (...) {
#pragma omp critical(btr_parallel_for_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
}

}  // namespace btr
