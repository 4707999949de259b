// Unlearning machinery.
//
// The composite objective is
//     total = output + beta * vkd
//     output = -alpha * CE(forget VQA) + CE(forget QA) + CE(retain VQA)
//              + CE(retain QA)                       (batch means)
//     vkd    = mean squared distance between student and teacher visual
//              features on retain VQA inputs
// with parameter updates gated by a boolean saliency mask over the V and P
// registry. The mask gates the update step (theta <- theta - lr * m .* grad):
// a boolean Hadamard inside a scalar loss is not well-typed, and gating the
// update is what "selectively updates parameters" does. A config switch
// restricts the gate to the forget-term gradient instead.
//
// Neuron pruning scores every vision-encoder MLP neuron by the ratio of its
// mean absolute pre-activation on forget-VQA probes to the same quantity on
// the probe sets to be preserved, prunes the top slice of the deepest layer,
// and keeps the pruned entries dead through all later updates.
//
// The Fisher mask compares per-parameter mean squared per-sample gradients
// (forget VQA vs the other three splits) against a threshold.

#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vkdlab/dataset.hpp"
#include "vkdlab/model.hpp"

namespace vkdlab {

// Boolean per-parameter indicator aligned with the V-then-P prefix of the
// model's flat parameter registry.
struct SaliencyMask {
  std::vector<std::uint8_t> bits;

  std::size_t count_true() const;
  bool operator==(const SaliencyMask&) const = default;
};

enum class Strategy {
  PruneThenFinetune,  // proposed pipeline
  FinetuneThenPrune,
  MaskUnion,          // fine-tune gated by m_P | m_F, no actual pruning
  MaskIntersection,   // fine-tune gated by m_P & m_F, no actual pruning
  PruneOnly,
  FinetuneOnly,
};

enum class MaskGate { EntireUpdate, ForgetTermOnly };
enum class QaProbe { Signature, Drop };
enum class MaskOp { Union, Intersection };

struct UnlearnConfig {
  double alpha = 1.25;  // forgetting strength
  double beta = 0.3;    // VKD strength
  double d_fisher = 1.0;
  std::optional<double> prune_ratio = 0.02;  // exactly one of these two
  std::optional<double> d_importance;
  double lr = 0.01;
  int epochs = 60;             // cap; the forget-accuracy stop usually fires first
  double forget_target = 0.65; // stop once forget-VQA accuracy falls to this level
  int batch_size = 48;         // forget-VQA batch; an epoch is one forget pass
  int retain_batch_size = 256; // preservation terms; larger batch = steadier anchor
  ComponentSet scope = ComponentSet::vision_side();
  Strategy strategy = Strategy::PruneThenFinetune;
  double eps = 1e-8;
  MaskGate mask_gate = MaskGate::EntireUpdate;
  QaProbe qa_probe = QaProbe::Signature;
  bool prune_all_layers = false;  // default: deepest vision layer only

  void validate() const;
};

struct Batches {
  std::span<const Sample> forget_vqa, forget_qa, retain_vqa, retain_qa;
};

struct LossTerms {
  double forget_vqa_ce = 0, forget_qa_ce = 0, retain_vqa_ce = 0, retain_qa_ce = 0;
  double vkd = 0;
  double output = 0;
  double total = 0;

  nlohmann::json to_json() const;
};

// Mean over the batch of |student feature - teacher feature|^2.
double vkd_loss(const ToyMllm& student, const ToyMllm& teacher,
                std::span<const Sample> retain_vqa);
// Same, accumulating weight * gradient (w.r.t. student V/P parameters) into
// grad (flat layout).
double vkd_loss_grad(const ToyMllm& student, const ToyMllm& teacher,
                     std::span<const Sample> retain_vqa, double* grad, double weight);

// Composite output-level objective; gradient via backprop over the full
// registry. forget_grad, when given, additionally receives the gradient of
// the forget-VQA cross-entropy alone (needed for forget-term-only gating).
LossTerms output_loss(const ToyMllm& model, const Batches& b, double alpha,
                      Vec* grad = nullptr, Vec* forget_grad = nullptr);

// output + beta * vkd.
LossTerms total_loss(const ToyMllm& model, const ToyMllm& teacher, const Batches& b,
                     double alpha, double beta, Vec* grad = nullptr,
                     Vec* forget_grad = nullptr);

// Mean |pre-activation| per vision-encoder MLP neuron, layer-major
// (h1 entries for layer 0, then h2 for layer 1). QA samples probe with
// their entity's signature image.
std::vector<double> activation_importance(const ToyMllm& model,
                                          std::span<const Sample> probe,
                                          const std::vector<Entity>& entities);

// Ratio of forget-VQA importance to the sum of the preserved-set importances.
std::vector<double> unlearn_importance(const ToyMllm& model, const SplitDatasets& data,
                                       QaProbe qa_probe = QaProbe::Signature,
                                       double eps = 1e-8);

// Threshold (d_importance) or top-ceil(ratio*N) selection with ties broken by
// ascending neuron index, restricted to the deepest layer unless configured
// otherwise.
PruneSet select_prune(const std::vector<double>& importance, const UnlearnConfig& cfg,
                      const ModelDims& dims);

void apply_prune(ToyMllm& model, const PruneSet& set);

// Mean over samples of the squared per-sample CE gradient, over the V/P
// prefix of the registry. parts are concatenated; the mean is over the total
// sample count.
Vec fisher_diag(const ToyMllm& model,
                const std::vector<std::span<const Sample>>& parts);

SaliencyMask fisher_mask(const ToyMllm& model, const SplitDatasets& data, double d_fisher,
                         double eps = 1e-8);

SaliencyMask mask_combine(const SaliencyMask& a, const SaliencyMask& b, MaskOp op);

// Mask-compatible form of a prune set: true exactly on the entries pruning
// would zero.
SaliencyMask prune_set_mask(const ModelDims& dims, const PruneSet& set);

struct AuditRecord {
  std::string method;
  std::string strategy;
  PruneSet prune_set;
  std::size_t fisher_mask_true = 0;
  std::size_t update_mask_true = 0;
  std::size_t mask_total = 0;
  SaliencyMask update_mask;  // final gate over V/P (scope- and prune-adjusted)
  std::vector<LossTerms> epoch_losses;
  double wall_seconds = 0.0;

  nlohmann::json to_json() const;
};

struct UnlearnResult {
  ToyMllm model;
  AuditRecord audit;
};

// Mini-batch steps on total_loss with updates gated by mask (and by the
// model's pruned entries and frozen components). Returns per-epoch mean loss
// terms. Exposed so the pipeline stages can be driven separately in tests.
std::vector<LossTerms> masked_finetune(ToyMllm& student, const ToyMllm& teacher,
                                       const SplitDatasets& data, const UnlearnConfig& cfg,
                                       const SaliencyMask* mask, Rng& rng);

// The proposed method: prune, mask, fine-tune (order per cfg.strategy), with
// the language head untouched.
UnlearnResult unlearn_vkd(const ToyMllm& vanilla, const SplitDatasets& data,
                          const UnlearnConfig& cfg, Rng& rng);

enum class BaselineMethod { Ga, GaDiff, KlMin, Npo, PruneOnly };

struct BaselineHyper {
  double lr = 0.01;
  int epochs = 60;
  double forget_target = 0.65;
  int batch_size = 48;
  int retain_batch_size = 256;
  double npo_beta = 0.1;
  std::optional<double> prune_ratio = 0.02;  // PruneOnly
  std::optional<double> d_importance;
  bool prune_all_layers = false;
  double eps = 1e-8;
};

UnlearnResult unlearn_baseline(const ToyMllm& vanilla, const SplitDatasets& data,
                               BaselineMethod method, ComponentSet scope,
                               const BaselineHyper& hyper, Rng& rng);

const char* baseline_name(BaselineMethod m);
const char* strategy_name(Strategy s);

}  // namespace vkdlab
