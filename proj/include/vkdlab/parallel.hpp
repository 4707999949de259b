// OpenMP helpers with deterministic semantics.
//
// for_index: parallel map where iteration i writes only its own outputs.
// map_accumulate: per-item dense vectors summed into an accumulator in item
// order (chunked: items are computed in parallel, the reduction is serial),
// so results are bit-identical for any thread count, including one. Tests
// compare against plain serial loops.

#pragma once

#include <cstddef>
#include <functional>

namespace vkdlab::par {

// Process-wide switch; the benchmark and tests flip it to compare kernels.
bool enabled();
void set_enabled(bool on);
void set_threads(int n);  // 0 = library default
int threads();

void for_index(std::size_t n, const std::function<void(std::size_t)>& fn);

// acc[0..dim) += sum over items of item_fn(i, scratch), accumulated in
// ascending i. item_fn must overwrite scratch[0..dim) completely.
void map_accumulate(std::size_t n, std::size_t dim, double* acc,
                    const std::function<void(std::size_t, double*)>& item_fn);

}  // namespace vkdlab::par
