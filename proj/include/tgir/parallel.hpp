#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace tgir {

namespace detail {
inline std::atomic<int>& thread_count_storage() {
    static std::atomic<int> count{0};
    return count;
}
}  // namespace detail

/// Worker count used by dense field operations. 0 means "resolve lazily":
/// TGIR_THREADS if set, otherwise 1.
inline int thread_count() {
    int n = detail::thread_count_storage().load();
    if (n > 0) return n;
    if (const char* env = std::getenv("TGIR_THREADS")) {
        try {
            n = std::stoi(env);
        } catch (...) {
            n = 0;
        }
    }
    return n > 0 ? n : 1;
}

inline void set_thread_count(int n) { detail::thread_count_storage().store(std::max(n, 0)); }

/// Runs fn(begin, end) over contiguous chunks of [0, n). Chunks are disjoint, so
/// callers that write per-index results get output independent of the worker count.
template <typename Fn>
void parallel_for(int n, Fn&& fn) {
    const int workers = std::min(thread_count(), n);
    if (workers <= 1) {
        if (n > 0) fn(0, n);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    const int chunk = (n + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
        const int begin = w * chunk;
        const int end = std::min(n, begin + chunk);
        if (begin >= end) break;
        pool.emplace_back([&fn, begin, end] { fn(begin, end); });
    }
    for (auto& t : pool) t.join();
}

/// Sum of per-index partials, reduced sequentially in index order. The partials
/// themselves may be computed in parallel; the result is bit-identical for any
/// worker count.
template <typename Fn>
double ordered_sum(int n, Fn&& partial) {
    std::vector<double> parts(static_cast<std::size_t>(std::max(n, 0)), 0.0);
    parallel_for(n, [&](int b, int e) {
        for (int i = b; i < e; ++i) parts[static_cast<std::size_t>(i)] = partial(i);
    });
    double total = 0.0;
    for (double p : parts) total += p;
    return total;
}

}  // namespace tgir
