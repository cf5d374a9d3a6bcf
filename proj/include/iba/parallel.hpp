#pragma once

#include <algorithm>
#include <atomic>
#include <thread>
#include <vector>

namespace iba {

// Runs f(i) for i in [0,n) across `jobs` threads. Work items must be
// independent; callers that aggregate should write into per-index slots so
// results do not depend on the thread count.
template <class F>
void parallel_for(int n, int jobs, F&& f) {
    jobs = std::max(1, std::min(jobs, n));
    if (jobs == 1) {
        for (int i = 0; i < n; ++i) f(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(jobs));
    std::exception_ptr err;
    std::mutex err_mu;
    for (int t = 0; t < jobs; ++t)
        pool.emplace_back([&] {
            for (;;) {
                const int i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    f(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lk(err_mu);
                    if (!err) err = std::current_exception();
                    return;
                }
            }
        });
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
}

}  // namespace iba
