#include "vkdlab/parallel.hpp"

#include <algorithm>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace vkdlab::par {

namespace {
bool g_enabled = true;
int g_threads = 0;
}  // namespace

bool enabled() { return g_enabled; }
void set_enabled(bool on) { g_enabled = on; }
void set_threads(int n) { g_threads = n; }

int threads() {
#ifdef _OPENMP
  if (!g_enabled) return 1;
  return g_threads > 0 ? g_threads : omp_get_max_threads();
#else
  return 1;
#endif
}

void for_index(std::size_t n, const std::function<void(std::size_t)>& fn) {
#ifdef _OPENMP
  if (g_enabled && n > 1) {
    const int nt = threads();
#pragma omp parallel for schedule(static) num_threads(nt)
    for (long long i = 0; i < static_cast<long long>(n); ++i) {
      fn(static_cast<std::size_t>(i));
    }
    return;
  }
#endif
  for (std::size_t i = 0; i < n; ++i) fn(i);
}

void map_accumulate(std::size_t n, std::size_t dim, double* acc,
                    const std::function<void(std::size_t, double*)>& item_fn) {
  const std::size_t chunk = std::max<std::size_t>(1, 4 * static_cast<std::size_t>(threads()));
  std::vector<double> scratch(chunk * dim);
  for (std::size_t base = 0; base < n; base += chunk) {
    const std::size_t count = std::min(chunk, n - base);
    for_index(count, [&](std::size_t k) { item_fn(base + k, scratch.data() + k * dim); });
    // Fixed-order reduction keeps the sum independent of the thread count.
    for (std::size_t k = 0; k < count; ++k) {
      const double* s = scratch.data() + k * dim;
      for (std::size_t j = 0; j < dim; ++j) acc[j] += s[j];
    }
  }
}

}  // namespace vkdlab::par
