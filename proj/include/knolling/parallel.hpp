#pragma once

#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace knolling {

// Worker count: KNOLL_THREADS if set, otherwise the hardware count.
inline int env_threads() {
    if (const char* s = std::getenv("KNOLL_THREADS")) {
        int v = std::atoi(s);
        if (v > 0) return v;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw ? static_cast<int>(hw) : 1;
}

// Static index partition; results are independent of the worker count
// because every index is processed exactly once with no shared state.
inline void parallel_for(size_t count, int threads, const std::function<void(size_t)>& fn) {
    if (threads <= 1 || count <= 1) {
        for (size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    size_t workers = std::min<size_t>(threads, count);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w]() {
            for (size_t i = w; i < count; i += workers) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace knolling
