// Metrics and the robustness harness: per-split accuracy, ROUGE-L, the
// relearning attack, and the Accuracy Gap.
//
// Accuracy is argmax correctness with ties broken to the lowest answer id.
// The Accuracy Gap is the final-epoch post-attack accuracy minus the
// pre-attack accuracy; the final-epoch reading is what reproduces the
// published attack tables exactly.

#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vkdlab/dataset.hpp"
#include "vkdlab/model.hpp"

namespace vkdlab {

struct RunReport {
  // Order: forget_vqa, forget_qa, retain_vqa, retain_qa, realworld_vqa,
  // realworld_qa. Empty splits are reported as absent, not zero.
  std::optional<double> acc[6];
  double wall_seconds = 0.0;        // side log only, never serialized
  nlohmann::json config_echo;

  nlohmann::json to_json() const;
  // One flat row; see csv_header() for the stable column order.
  std::string to_csv_row(const std::string& label, std::uint64_t seed) const;
  static std::string csv_header();
};

RunReport evaluate(const ToyMllm& model, const SplitDatasets& data);

// Accuracy over one sample list (1.0 when empty would be meaningless; caller
// guards). Exposed for the attack loop.
double split_accuracy(const ToyMllm& model, std::span<const Sample> samples);

namespace serial {
double split_accuracy(const ToyMllm& model, std::span<const Sample> samples);
}

// ROUGE-L F-measure over token sequences: recall = LCS/|reference|,
// precision = LCS/|generated|, F = 2RP/(R+P); 0 when LCS = 0 or either
// sequence is empty.
double rouge_l(std::span<const int> reference, std::span<const int> generated);

struct AttackCurve {
  double pre_attack = 0.0;
  std::vector<double> per_epoch;
  double accuracy_gap = 0.0;  // last(per_epoch) - pre_attack, exactly

  nlohmann::json to_json() const;
  std::string to_csv_row(const std::string& label, double fraction,
                         std::uint64_t seed) const;
  static std::string csv_header(int epochs);
};

double accuracy_gap(const AttackCurve& curve);

// Fine-tunes the unlearned model on subsample(forget_vqa, fraction) with
// plain CE descent over the given component scope, measuring Forget-VQA
// accuracy on the FULL forget set after each epoch. Pruned entries stay dead
// (model invariant); saliency masks are not an attacker's to honor.
// final_model, when given, receives the post-attack model.
AttackCurve relearn_attack(const ToyMllm& unlearned, std::span<const Sample> forget_vqa,
                           double fraction, int epochs, double lr, ComponentSet scope,
                           int batch_size, Rng& rng, ToyMllm* final_model = nullptr);

}  // namespace vkdlab
