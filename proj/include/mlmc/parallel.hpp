#pragma once

#include <cstdint>
#include <functional>

namespace mlmc {

/// Run fn(block_index, begin, end) over fixed-size blocks of [begin, end),
/// distributed over `threads` workers. Block boundaries depend only on
/// block_size, so per-block results can be merged in block order for
/// thread-count-independent, bitwise-reproducible reductions.
/// The first exception thrown by any block is rethrown after all workers join.
void parallel_for_blocks(std::int64_t begin, std::int64_t end, int threads,
                         std::int64_t block_size,
                         const std::function<void(std::int64_t, std::int64_t, std::int64_t)>& fn);

} // namespace mlmc
