#include "lesionbench/parallel.hpp"

#include <atomic>
#include <cstdlib>

namespace lesionbench {

namespace {

int default_threads() {
    if (const char* env = std::getenv("LESIONBENCH_THREADS")) {
        int n = std::atoi(env);
        if (n >= 1) return n;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw ? static_cast<int>(hw) : 1;
}

std::atomic<int> g_threads{0};  // 0 = not yet resolved

}  // namespace

int num_threads() {
    int n = g_threads.load(std::memory_order_relaxed);
    if (n == 0) {
        n = default_threads();
        g_threads.store(n, std::memory_order_relaxed);
    }
    return n;
}

void set_num_threads(int n) { g_threads.store(n >= 1 ? n : 1, std::memory_order_relaxed); }

}  // namespace lesionbench
