#include "mlmc/parallel.hpp"

#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace mlmc {

void parallel_for_blocks(std::int64_t begin, std::int64_t end, int threads,
                         std::int64_t block_size,
                         const std::function<void(std::int64_t, std::int64_t, std::int64_t)>& fn)
{
    if (end <= begin)
        return;
    const std::int64_t count = end - begin;
    const std::int64_t nblocks = (count + block_size - 1) / block_size;
    if (threads < 1)
        threads = 1;
    if (static_cast<std::int64_t>(threads) > nblocks)
        threads = static_cast<int>(nblocks);

    std::atomic<std::int64_t> next{0};
    std::mutex err_mutex;
    std::exception_ptr first_error;

    auto worker = [&]() {
        while (true) {
            const std::int64_t b = next.fetch_add(1);
            if (b >= nblocks)
                return;
            const std::int64_t b_begin = begin + b * block_size;
            const std::int64_t b_end = std::min(end, b_begin + block_size);
            try {
                fn(b, b_begin, b_end);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mutex);
                if (!first_error)
                    first_error = std::current_exception();
                return;
            }
        }
    };

    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads - 1));
    for (int t = 1; t < threads; ++t)
        pool.emplace_back(worker);
    worker();
    for (auto& th : pool)
        th.join();

    if (first_error)
        std::rethrow_exception(first_error);
}

} // namespace mlmc
