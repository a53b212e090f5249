#pragma once

#include <algorithm>
#include <cstdint>
#include <thread>
#include <vector>

namespace lesionbench {

int num_threads();
void set_num_threads(int n);

// Runs fn(begin, end) over a fixed contiguous partition of [0, n).
// Chunks depend only on n and the thread budget, and every index is produced
// exactly once, so results are identical for any thread count as long as
// chunks write disjoint output.
template <typename F>
void parallel_for(int64_t n, F&& fn) {
    if (n <= 0) return;
    int nt = std::min<int64_t>(num_threads(), n);
    if (nt <= 1) {
        fn(int64_t{0}, n);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(nt));
    int64_t chunk = (n + nt - 1) / nt;
    for (int t = 0; t < nt; ++t) {
        int64_t b = t * chunk;
        int64_t e = std::min<int64_t>(b + chunk, n);
        if (b >= e) break;
        pool.emplace_back([&fn, b, e] { fn(b, e); });
    }
    for (auto& th : pool) th.join();
}

}  // namespace lesionbench
