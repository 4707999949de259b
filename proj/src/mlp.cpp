#include "vkdlab/mlp.hpp"

#include <string>

namespace vkdlab {

static void require_input(const MlpLayer& layer, std::size_t got) {
  if (got != layer.in_dim()) {
    throw ShapeError("mlp: input length " + std::to_string(got) + ", expected " +
                     std::to_string(layer.in_dim()));
  }
  if (layer.bias.size() != layer.out_dim()) {
    throw ShapeError("mlp: bias length inconsistent with weight rows");
  }
}

MlpTrace mlp_forward(const MlpLayer& layer, std::span<const double> x) {
  require_input(layer, x.size());
  MlpTrace t;
  t.pre.resize(layer.out_dim());
  for (std::size_t r = 0; r < layer.out_dim(); ++r) {
    double z = layer.bias[r];
    const double* wrow = layer.weight.data.data() + r * layer.weight.cols;
    for (std::size_t c = 0; c < layer.in_dim(); ++c) z += wrow[c] * x[c];
    t.pre[r] = z;
  }
  t.out = t.pre;
  if (layer.act == Activation::Relu) {
    for (double& v : t.out) v = v > 0.0 ? v : 0.0;
  }
  return t;
}

MlpGrads mlp_backward(const MlpLayer& layer, std::span<const double> x,
                      std::span<const double> upstream) {
  require_input(layer, x.size());
  if (upstream.size() != layer.out_dim()) {
    throw ShapeError("mlp_backward: upstream length mismatch");
  }
  MlpTrace t = mlp_forward(layer, x);

  MlpGrads g;
  g.dweight = Matrix(layer.out_dim(), layer.in_dim());
  g.dbias.resize(layer.out_dim());
  g.dx.assign(layer.in_dim(), 0.0);

  for (std::size_t r = 0; r < layer.out_dim(); ++r) {
    double dz = upstream[r];
    if (layer.act == Activation::Relu && t.pre[r] <= 0.0) dz = 0.0;
    g.dbias[r] = dz;
    double* wgrow = g.dweight.data.data() + r * layer.in_dim();
    const double* wrow = layer.weight.data.data() + r * layer.in_dim();
    for (std::size_t c = 0; c < layer.in_dim(); ++c) {
      wgrow[c] = dz * x[c];
      g.dx[c] += dz * wrow[c];
    }
  }
  return g;
}

}  // namespace vkdlab
