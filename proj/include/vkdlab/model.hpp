// Cascaded toy multimodal model M = (V, P, W).
//
//   V  vision encoder: two relu MLP layers over the image
//   P  projector: one linear layer producing the visual feature (d_model)
//   W  language head: name/attribute embedding tables, a no-image embedding,
//      a two-layer fusion MLP over the concatenated embeddings, and a linear
//      readout over the answer vocabulary
//
// VQA runs the image through V and P and fuses the feature with the
// unknown-name embedding, so entity identity can only enter through the
// image. QA fuses the entity's name embedding with the no-image embedding
// and never touches V or P; that path is exactly invariant under any
// vision-side unlearning.
//
// All parameters live in named blocks with a fixed flat order (V blocks,
// then P, then W), which is what masks, Fisher scores, and checkpoints are
// aligned with.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vkdlab/dataset.hpp"
#include "vkdlab/matrix.hpp"
#include "vkdlab/mlp.hpp"
#include "vkdlab/rng.hpp"

namespace vkdlab {

enum class Component { Vision, Projector, Lm };

// Small set-of-components; defaults to empty.
struct ComponentSet {
  unsigned bits = 0;

  static ComponentSet none() { return {}; }
  static ComponentSet all() { return {7}; }
  static ComponentSet vision_side() {  // {V, P}
    return ComponentSet{}.with(Component::Vision).with(Component::Projector);
  }
  static ComponentSet of(Component c) { return ComponentSet{}.with(c); }

  ComponentSet with(Component c) const {
    return ComponentSet{bits | (1u << static_cast<unsigned>(c))};
  }
  bool contains(Component c) const { return bits & (1u << static_cast<unsigned>(c)); }
  bool empty() const { return bits == 0; }
  bool operator==(const ComponentSet&) const = default;
};

struct ModelDims {
  int image_dim = 32;
  int h1 = 64;
  int h2 = 64;
  int d_model = 32;
  int fusion_width = 64;
  int answer_vocab = 8;
  int n_names = 0;  // entity names; the table holds one extra unknown-name row
  int n_attrs = 0;

  bool operator==(const ModelDims&) const = default;
};

struct ParamBlock {
  Component comp;
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
};

struct ParamLayout {
  std::vector<ParamBlock> blocks;
  std::size_t total = 0;
  std::size_t vision_end = 0;  // V blocks occupy [0, vision_end)
  std::size_t vp_end = 0;      // V and P blocks occupy [0, vp_end)

  std::size_t component_begin(Component c) const;
  std::size_t component_end(Component c) const;
  std::size_t component_size(Component c) const {
    return component_end(c) - component_begin(c);
  }
};

ParamLayout make_layout(const ModelDims& dims);

// Neurons inside the vision encoder, addressed as (layer index, neuron index).
struct PruneSet {
  std::vector<std::pair<int, int>> neurons;

  bool empty() const { return neurons.empty(); }
  std::size_t size() const { return neurons.size(); }
};

// Traced forward passes (kept so backward does not recompute activations).
struct VisualTrace {
  Vec image;
  MlpTrace v0, v1, proj;
  const Vec& feature() const { return proj.out; }
};

struct AnswerTrace {
  Vec fuse_in;
  MlpTrace f0, f1, readout;
  std::optional<VisualTrace> visual;  // set for VQA
  int name_row = 0;                   // row used in the name table
  int attr = 0;
  const Vec& logits() const { return readout.out; }
};

class ToyMllm {
 public:
  ToyMllm() = default;
  static ToyMllm init(const ModelDims& dims, Rng& rng);

  const ModelDims& dims() const { return dims_; }
  const ParamLayout& layout() const { return layout_; }

  // --- forward paths -------------------------------------------------------
  Vec visual_embedding(std::span<const double> image) const;
  Vec forward_vqa(std::span<const double> image, int attr) const;
  Vec forward_qa(int name_id, int attr) const;

  VisualTrace visual_traced(std::span<const double> image) const;
  AnswerTrace vqa_traced(std::span<const double> image, int attr) const;
  AnswerTrace qa_traced(int name_id, int attr) const;

  // Accumulates weight * d(logit loss)/d(theta) into grad (flat layout).
  void backward(const AnswerTrace& trace, const Vec& dlogits, double* grad,
                double weight = 1.0) const;
  // Same for the visual feature alone (touches only V and P blocks).
  void backward_visual(const VisualTrace& trace, const Vec& dfeature, double* grad,
                       double weight = 1.0) const;

  // --- parameters ----------------------------------------------------------
  Vec to_flat() const;
  void from_flat(const Vec& flat);
  // Copies one component's parameter range out of / into a flat vector.
  void copy_component(Component c, const ToyMllm& src);

  // theta <- theta - lr * grad, skipping frozen components, pruned entries,
  // and (when given) mask-false V/P entries. grad is in flat layout.
  void apply_update(const double* grad, double lr,
                    const std::vector<std::uint8_t>* vp_mask = nullptr);

  ComponentSet frozen() const { return frozen_; }
  void set_frozen(ComponentSet s) { frozen_ = s; }

  const PruneSet& pruned() const { return pruned_; }
  const std::vector<std::uint8_t>& pruned_entries() const { return pruned_entries_; }
  // Zeroes the neuron's incoming row, bias entry, and outgoing column, and
  // registers the entries so every later update skips them.
  void prune_neurons(const PruneSet& set);

  std::uint64_t origin_seed() const { return origin_seed_; }
  void set_origin_seed(std::uint64_t s) { origin_seed_ = s; }

  // --- checkpoint ----------------------------------------------------------
  // Single JSON document {meta: {dims, seed, frozen, pruned[, config]},
  // params: {component -> layer -> flat arrays}}, doubles at 17 significant
  // digits. config_echo, when non-null, is embedded verbatim under meta.
  void save_checkpoint(const std::string& path,
                       const nlohmann::json& config_echo = nullptr) const;
  static ToyMllm load_checkpoint(const std::string& path);

  const MlpLayer& vision_layer(int idx) const { return idx == 0 ? vis0_ : vis1_; }
  const MlpLayer& projector() const { return proj_; }

 private:
  friend struct ModelAccess;

  void rebuild_layout() { layout_ = make_layout(dims_); }
  int unknown_name_row() const { return dims_.n_names; }
  Vec fuse_input(int name_row, int attr, std::span<const double> feature) const;

  ModelDims dims_;
  ParamLayout layout_;

  MlpLayer vis0_, vis1_;   // V
  MlpLayer proj_;          // P
  Matrix name_table_;      // (n_names + 1) x d_model, last row = unknown name
  Matrix attr_table_;      // n_attrs x d_model
  Vec no_image_;           // d_model
  MlpLayer fus0_, fus1_, readout_;  // rest of W

  ComponentSet frozen_;
  PruneSet pruned_;
  std::vector<std::uint8_t> pruned_entries_;  // over [0, vp_end), empty if none
  std::uint64_t origin_seed_ = 0;
};

ToyMllm clone_frozen(const ToyMllm& model, ComponentSet freeze);

// Flat V/P entries a prune set touches: the neuron's incoming weight row and
// bias entry plus its outgoing weight column in the next layer (projector for
// the deepest vision layer). Shared by actual pruning and the mask variants.
std::vector<std::uint8_t> prune_entry_mask(const ModelDims& dims, const PruneSet& set);

// Cross-entropy from logits (stable log-sum-exp). dlogits = softmax - onehot.
double cross_entropy(const Vec& logits, int answer, Vec* dlogits = nullptr);
Vec softmax(const Vec& logits);

struct TrainResult {
  ToyMllm model;
  std::vector<double> epoch_losses;  // mean sample cross-entropy per epoch
};

// Plain mini-batch gradient descent over all VQA and QA samples of every
// split; requires an unfrozen model and a non-empty dataset.
TrainResult train_vanilla(const ToyMllm& base, const SplitDatasets& data, int epochs,
                          double lr, int batch_size, Rng& rng);

// Throws ShapeError unless every sample's ids and image dimensions fit the
// model. Called once up front so the per-sample hot loops cannot throw.
void check_compat(const ToyMllm& model, const SplitDatasets& data);
void check_compat(const ToyMllm& model, std::span<const Sample> samples);

}  // namespace vkdlab
