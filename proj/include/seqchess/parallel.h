#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace seqchess {

/// Calls fn(worker, i) for i in [0, n) on `workers` threads. Items are claimed
/// dynamically, so fn must write results by index. The first exception is
/// rethrown after all threads stop.
template <class Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
    const int w = std::max(1, std::min<int>(workers, static_cast<int>(std::max<std::size_t>(n, 1))));
    if (w == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(0, i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::atomic<bool> stop{false};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> threads;
    for (int t = 0; t < w; ++t) {
        threads.emplace_back([&, t] {
            for (;;) {
                if (stop) return;
                const std::size_t i = next++;
                if (i >= n) return;
                try {
                    fn(t, i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                    stop = true;
                }
            }
        });
    }
    for (auto& th : threads) th.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace seqchess
