// Single MLP layer with explicit forward and backward passes.
//
// The forward pass reports the pre-activation z alongside the output; the
// mean of |z| over a probe set is the neuron-importance signal used for
// pruning, so z must come from exactly the same computation as the output.

#pragma once

#include <cstddef>
#include <span>

#include "vkdlab/matrix.hpp"

namespace vkdlab {

enum class Activation { Identity, Relu };

struct MlpLayer {
  Matrix weight;  // out x in
  Vec bias;       // out
  Activation act = Activation::Identity;

  std::size_t in_dim() const { return weight.cols; }
  std::size_t out_dim() const { return weight.rows; }
};

struct MlpTrace {
  Vec pre;  // z = Wx + b
  Vec out;  // act(z)
};

struct MlpGrads {
  Matrix dweight;
  Vec dbias;
  Vec dx;
};

MlpTrace mlp_forward(const MlpLayer& layer, std::span<const double> x);

// upstream = dL/dout. Returns exact analytic gradients of the forward map.
MlpGrads mlp_backward(const MlpLayer& layer, std::span<const double> x,
                      std::span<const double> upstream);

}  // namespace vkdlab
