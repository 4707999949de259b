// Serial vs OpenMP timing for the per-sample kernels (evaluation, Fisher
// diagonal, batch gradients) and the matmul kernel. The parallel and serial
// paths are required to agree bit-for-bit (ordered reductions); tests assert
// that, this just reports the speedup.

#include <algorithm>
#include <cstdio>
#include <functional>

#include <omp.h>

#include "vkdlab/eval.hpp"
#include "vkdlab/parallel.hpp"
#include "vkdlab/unlearn.hpp"

using namespace vkdlab;

namespace {

double best_of(int reps, const std::function<void()>& fn) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const double t0 = omp_get_wtime();
    fn();
    best = std::min(best, omp_get_wtime() - t0);
  }
  return best;
}

void row(const char* name, const std::function<void()>& fn) {
  fn();  // warm-up
  par::set_enabled(false);
  const double serial = best_of(5, fn);
  par::set_enabled(true);
  const double parallel = best_of(5, fn);
  std::printf("%-24s serial %8.3f ms   omp %8.3f ms   speedup %5.2fx\n", name,
              serial * 1e3, parallel * 1e3, serial / parallel);
}

}  // namespace

int main() {
  std::printf("threads: %d\n", par::threads());

  GenParams gp;
  SplitDatasets data = generate(gp);
  ModelDims dims;
  dims.n_names = data.total_entities();
  dims.n_attrs = gp.n_attributes;
  Rng rng(7);
  ToyMllm model = ToyMllm::init(dims, rng);

  row("matmul 256x256", [] {
    Matrix a(256, 256), b(256, 256);
    for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] = 0.001 * (double)(i % 97);
    for (std::size_t i = 0; i < b.data.size(); ++i) b.data[i] = 0.001 * (double)(i % 89);
    Matrix c = par::enabled() ? matmul(a, b) : serial::matmul(a, b);
    (void)c;
  });

  row("evaluate all splits", [&] { (void)evaluate(model, data); });

  row("fisher_diag forget", [&] { (void)fisher_diag(model, {data.forget_vqa}); });

  row("fisher_diag retain", [&] {
    (void)fisher_diag(model, {data.forget_qa, data.retain_vqa, data.retain_qa});
  });

  row("output_loss grad", [&] {
    Batches b{data.forget_vqa, data.forget_qa,
              std::span<const Sample>(data.retain_vqa).subspan(0, 128), data.retain_qa};
    Vec grad;
    (void)output_loss(model, b, 1.25, &grad);
  });

  row("activation importance", [&] {
    (void)activation_importance(model, data.retain_vqa, data.entities);
  });

  return 0;
}
