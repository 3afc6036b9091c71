#pragma once

#include <atomic>
#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace cth {

namespace detail {
inline std::atomic<int>& thread_count() {
#ifdef _OPENMP
    static std::atomic<int> n{omp_get_max_threads()};
#else
    static std::atomic<int> n{1};
#endif
    return n;
}
}  // namespace detail

inline void set_threads(int n) { detail::thread_count() = n < 1 ? 1 : n; }
inline int threads() { return detail::thread_count(); }

// Static-schedule parallel loop. Every output element is owned by exactly
// one iteration, and each iteration's arithmetic order is fixed, so results
// are bit-identical for any thread count.
template <typename F>
void parallel_for(int64_t n, F&& f) {
#ifdef _OPENMP
    int t = threads();
    if (t > 1 && n > 1) {
#pragma omp parallel for schedule(static) num_threads(t)
        for (int64_t i = 0; i < n; ++i) f(i);
        return;
    }
#endif
    for (int64_t i = 0; i < n; ++i) f(i);
}

}  // namespace cth
