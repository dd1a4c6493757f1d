#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace tubedet {

/// Worker count for n independent units: the TUBEDET_WORKERS environment
/// variable wins, otherwise one per hardware thread, never more than units.
inline std::size_t worker_count(std::size_t units) {
    if (units < 2) return 1;
    std::size_t workers = 0;
    if (const char* env = std::getenv("TUBEDET_WORKERS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v >= 1) workers = static_cast<std::size_t>(v);
    }
    if (workers == 0) {
        const unsigned hw = std::thread::hardware_concurrency();
        workers = hw == 0 ? 1 : hw;
    }
    return std::min(workers, units);
}

/// Runs fn(i) for every i in [0, n). Callers must write results into
/// index-i slots so the outcome is independent of scheduling. The first
/// exception wins and is rethrown after all workers stop.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    const std::size_t workers = worker_count(n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> threads;
    threads.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w)
        threads.emplace_back([&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                    next.store(n);  // drain remaining work
                    return;
                }
            }
        });
    for (auto& t : threads) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace tubedet
