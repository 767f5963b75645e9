#pragma once

#include <cstdint>
#include <functional>
#include <thread>
#include <vector>

namespace posediff {

inline thread_local bool tl_inside_parallel = false;

/// Splits [0, n) into contiguous chunks, one per hardware thread. The
/// partition depends only on n and the thread count, and each chunk is
/// computed independently, so results are identical to a serial run.
/// Nested calls run serially.
inline void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& body) {
    unsigned workers = std::thread::hardware_concurrency();
    if (n <= 0) return;
    if (tl_inside_parallel || workers <= 1 || n == 1) {
        body(0, n);
        return;
    }
    int64_t nthreads = std::min<int64_t>(workers, n);
    int64_t chunk = (n + nthreads - 1) / nthreads;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(nthreads));
    for (int64_t k = 0; k < nthreads; ++k) {
        int64_t lo = k * chunk;
        int64_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &body] {
            tl_inside_parallel = true;
            body(lo, hi);
            tl_inside_parallel = false;
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace posediff
