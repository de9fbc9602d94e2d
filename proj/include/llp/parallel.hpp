#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace llp {

// Splits [0, n) into `workers` contiguous shards and runs `body(shard, begin,
// end)` on each. Shard boundaries depend only on (n, workers), so any merge
// performed in shard order is deterministic. workers == 1 runs inline.
template <class Body>
void parallel_for(std::size_t n, unsigned workers, Body&& body) {
    if (n == 0) return;
    const unsigned used = static_cast<unsigned>(std::min<std::size_t>(std::max(1u, workers), n));
    if (used == 1) {
        body(0u, std::size_t{0}, n);
        return;
    }
    const std::size_t chunk = n / used;
    const std::size_t rem = n % used;
    std::vector<std::thread> threads;
    threads.reserve(used);
    std::exception_ptr first_error;
    std::mutex error_mu;
    std::size_t begin = 0;
    for (unsigned s = 0; s < used; ++s) {
        const std::size_t end = begin + chunk + (s < rem ? 1 : 0);
        threads.emplace_back([&, s, begin, end] {
            try {
                body(s, begin, end);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mu);
                if (!first_error) first_error = std::current_exception();
            }
        });
        begin = end;
    }
    for (auto& t : threads) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

inline unsigned shard_count(std::size_t n, unsigned workers) {
    if (n == 0) return 0;
    return static_cast<unsigned>(std::min<std::size_t>(std::max(1u, workers), n));
}

}  // namespace llp
