#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace tpgo {

// Runs fn(i) for i in [0, n) on at most `concurrency` threads. The first
// exception thrown by any fn is rethrown after all workers stop.
inline void parallel_for(std::size_t n, std::size_t concurrency, const std::function<void(std::size_t)>& fn) {
    if (n == 0) return;
    concurrency = std::clamp<std::size_t>(concurrency, 1, n);
    if (concurrency == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    {
        std::vector<std::jthread> workers;
        workers.reserve(concurrency);
        for (std::size_t w = 0; w < concurrency; ++w) {
            workers.emplace_back([&] {
                for (std::size_t i = next++; i < n; i = next++) {
                    try {
                        fn(i);
                    } catch (...) {
                        std::lock_guard lock(failure_mu);
                        if (!failure) failure = std::current_exception();
                        next = n;
                    }
                }
            });
        }
    }
    if (failure) std::rethrow_exception(failure);
}

}  // namespace tpgo
