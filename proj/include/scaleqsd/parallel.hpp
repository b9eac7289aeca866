#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace scaleqsd {

// Worker count: SCALEQSD_THREADS if set and positive, otherwise the
// hardware concurrency (at least 1).
inline std::size_t worker_count() {
    if (const char* env = std::getenv("SCALEQSD_THREADS")) {
        char* end = nullptr;
        long v = std::strtol(env, &end, 10);
        if (end != env && v > 0) return static_cast<std::size_t>(v);
    }
    return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

// Runs body(i) for i in [begin, end). Work is handed out dynamically, so
// body must not depend on which thread executes it.
template <typename Body>
void parallel_for(std::size_t begin, std::size_t end, Body&& body, std::size_t grain = 1) {
    if (end <= begin) return;
    const std::size_t workers = std::min(worker_count(), (end - begin + grain - 1) / grain);
    if (workers <= 1) {
        for (std::size_t i = begin; i < end; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{begin};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto run = [&] {
        try {
            for (;;) {
                std::size_t lo = next.fetch_add(grain);
                if (lo >= end) break;
                std::size_t hi = std::min(end, lo + grain);
                for (std::size_t i = lo; i < hi; ++i) body(i);
            }
        } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
            next.store(end);
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(run);
    run();
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

}  // namespace scaleqsd
