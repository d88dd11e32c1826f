#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace apsk {

/// Samples are grouped into blocks of this many consecutive indices. Block
/// boundaries never depend on the worker count, so per-block partial sums
/// merged in block order give bit-identical totals for any --threads value.
inline constexpr std::size_t kReductionBlock = 256;

/// Runs body(accumulator, begin, end) over consecutive sample ranges, one
/// fresh accumulator per block, and merges the blocks in index order.
///
/// `make()` builds an empty accumulator; `merge(into, from)` adds one block.
template <class Acc, class Make, class Body, class Merge>
Acc blocked_reduce(std::size_t samples, unsigned threads, Make make, Body body, Merge merge) {
    const std::size_t blocks = (samples + kReductionBlock - 1) / kReductionBlock;
    std::vector<Acc> partial;
    partial.reserve(blocks);
    for (std::size_t b = 0; b < blocks; ++b) {
        partial.push_back(make());
    }

    auto run_block = [&](std::size_t b) {
        const std::size_t begin = b * kReductionBlock;
        const std::size_t end = std::min(samples, begin + kReductionBlock);
        body(partial[b], begin, end);
    };

    const unsigned workers = std::max(1U, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(blocks, 1))));
    if (workers == 1) {
        for (std::size_t b = 0; b < blocks; ++b) {
            run_block(b);
        }
    } else {
        std::mutex error_mutex;
        std::exception_ptr first_error;
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (unsigned w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                try {
                    for (std::size_t b = w; b < blocks; b += workers) {
                        run_block(b);
                    }
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!first_error) {
                        first_error = std::current_exception();
                    }
                }
            });
        }
        for (auto& t : pool) {
            t.join();
        }
        if (first_error) {
            std::rethrow_exception(first_error);
        }
    }

    Acc total = make();
    for (auto& block : partial) {
        merge(total, block);
    }
    return total;
}

}  // namespace apsk
