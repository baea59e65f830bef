#pragma once

#include <cstddef>
#include <functional>

namespace xbr {

// Worker count: hardware concurrency, capped by the XBAR_THREADS environment variable.
unsigned worker_count();

// Splits [0, n) into at most worker_count() contiguous chunks and runs
// fn(chunk_index, begin, end) for each. Chunk boundaries depend only on n and
// the worker count, so reductions over chunk results in index order are deterministic.
void parallel_chunks(std::size_t n, const std::function<void(std::size_t, std::size_t, std::size_t)>& fn);

// Number of chunks parallel_chunks will use for n items.
std::size_t chunk_count(std::size_t n);

}  // namespace xbr
