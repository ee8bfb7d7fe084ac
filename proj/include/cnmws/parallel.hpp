#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

namespace cnmws {

[[nodiscard]] inline int default_threads() {
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

// Runs work(chunk_index, begin, end) for fixed-size chunks of [0, n_items) on
// up to `threads` workers and folds the per-chunk results in chunk order.
// Because the chunking and the fold order do not depend on the thread count,
// neither does the result.
template <class Acc, class Work, class Merge>
Acc parallel_chunks(std::size_t n_items, std::size_t chunk, int threads, Work work, Merge merge) {
    chunk = std::max<std::size_t>(chunk, 1);
    const std::size_t n_chunks = (n_items + chunk - 1) / chunk;
    if (n_chunks == 0) {
        return work(std::size_t{0}, std::size_t{0}, std::size_t{0});
    }
    std::vector<std::optional<Acc>> results(n_chunks);
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;

    auto worker = [&] {
        for (;;) {
            const std::size_t c = next.fetch_add(1);
            if (c >= n_chunks) {
                return;
            }
            try {
                const std::size_t begin = c * chunk;
                results[c].emplace(work(c, begin, std::min(n_items, begin + chunk)));
            } catch (...) {
                std::lock_guard<std::mutex> lock(failure_mutex);
                if (!failure) {
                    failure = std::current_exception();
                }
                next.store(n_chunks);
                return;
            }
        }
    };

    const int n_workers = std::max(1, std::min<int>(threads, static_cast<int>(n_chunks)));
    if (n_workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(n_workers));
        for (int i = 0; i < n_workers; ++i) {
            pool.emplace_back(worker);
        }
        for (auto& t : pool) {
            t.join();
        }
    }
    if (failure) {
        std::rethrow_exception(failure);
    }
    Acc total = std::move(*results.front());
    for (std::size_t c = 1; c < n_chunks; ++c) {
        merge(total, *results[c]);
    }
    return total;
}

} // namespace cnmws
