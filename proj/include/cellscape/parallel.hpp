#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace cellscape {

// Process-wide cap on worker threads. Defaults to the hardware concurrency.
void set_max_threads(std::size_t n);
std::size_t max_threads();

// Resolves a thread count from an explicit request, then CELLSCAPE_THREADS,
// then hardware concurrency.
std::size_t resolve_thread_count(std::size_t requested);

// Runs body(begin, end) over contiguous chunks covering [0, n). Chunk
// boundaries depend only on n and grain, never on the thread count, so a
// caller that writes per-chunk partial results and reduces them in chunk
// order gets the same answer under any parallelism.
void parallel_chunks(std::size_t n, std::size_t grain,
                     const std::function<void(std::size_t chunk, std::size_t begin, std::size_t end)>& body);

// Runs body(i) for every i in [0, n).
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

inline std::size_t chunk_count(std::size_t n, std::size_t grain) {
    return grain == 0 ? 0 : (n + grain - 1) / grain;
}

// Sum of already-computed partials by recursive halving.
double pairwise_sum(std::span<const double> values);

}  // namespace cellscape
