#pragma once

#include <algorithm>
#include <thread>
#include <vector>

namespace ws {

// Process-wide op parallelism. Every parallel_for partitions the index range
// into contiguous blocks, one per worker; each index writes only its own
// outputs, so results are bit-identical for any thread count.
inline int& thread_count() {
    static int n = std::max(1u, std::thread::hardware_concurrency());
    return n;
}

inline void set_threads(int n) { thread_count() = std::max(1, n); }

template <class F>
void parallel_for(long n, F&& fn) {
    const int workers = static_cast<int>(std::min<long>(thread_count(), n));
    if (workers <= 1) {
        for (long i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    const long chunk = (n + workers - 1) / workers;
    for (int t = 0; t < workers; ++t) {
        const long lo = t * chunk;
        const long hi = std::min(n, lo + chunk);
        pool.emplace_back([lo, hi, &fn] {
            for (long i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

} // namespace ws
