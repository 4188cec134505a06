#pragma once

#include <cstddef>
#include <functional>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace tgl {

// Parallel map over [0, n). Each index writes only to its own slot; callers
// do any reduction afterwards in fixed index order, so the result is
// byte-identical for every thread count. threads <= 1 runs the plain serial
// loop (the reference path used by the determinism tests and the benchmark).
template <typename Fn>
void parallel_for(size_t n, int threads, Fn&& fn) {
    if (threads <= 1) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(threads)
    for (long long i = 0; i < static_cast<long long>(n); ++i) {
        fn(static_cast<size_t>(i));
    }
#else
    for (size_t i = 0; i < n; ++i) fn(i);
#endif
}

inline int hardware_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

}  // namespace tgl
