// Experiment configuration: a TOML-style key-value file (sections, scalars,
// flat arrays, # comments) validated strictly — unknown sections or keys are
// rejected — and echoed verbatim into every output file.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vkdlab/dataset.hpp"
#include "vkdlab/model.hpp"
#include "vkdlab/unlearn.hpp"

namespace vkdlab::cli {

struct ExperimentConfig {
  // [dataset]
  int n_entities = 40;
  int n_attributes = 4;
  double forget_ratio = 0.05;
  int views_per_entity = 6;
  double noise_sigma = 0.1;
  int n_realworld = 10;
  int answer_vocab = 8;
  int image_dim = 32;

  // [model]
  int h1 = 64;
  int h2 = 64;
  int d_model = 32;
  int fusion_width = 64;

  // [train]
  int train_epochs = 60;
  double train_lr = 0.05;
  int train_batch = 32;

  // [unlearn]
  std::string method = "vkd";  // vkd | ga | ga_diff | kl_min | npo | prune_only
  double alpha = 1.25;
  double beta = 0.3;
  double d_fisher = 1.0;
  std::optional<double> prune_ratio = 0.02;
  std::optional<double> d_importance;
  double unlearn_lr = 0.01;
  int unlearn_epochs = 60;           // cap; forget_target stops earlier
  double forget_target = 0.65;
  int unlearn_batch = 48;
  int retain_batch = 256;
  std::string scope = "vision";  // vision | full
  std::string strategy = "prune_then_finetune";
  double eps = 1e-8;
  std::string mask_gate = "entire_update";  // entire_update | forget_term
  std::string qa_probe = "signature";       // signature | drop
  bool prune_all_layers = false;
  double npo_beta = 0.1;

  // [attack]
  std::vector<double> attack_fractions = {0.1, 0.2, 0.3};
  int attack_epochs = 5;
  double attack_lr = 0.05;
  int attack_batch = 4;
  std::string attack_scope = "method";  // method | full

  // [sweep]
  std::string sweep_parameter = "beta";  // alpha | beta
  std::vector<double> sweep_grid = {0.0, 0.1, 0.3, 1.0};

  // [run]
  std::vector<std::uint64_t> seeds = {0};
  std::string out_dir = "out";
  int threads = 0;

  static ExperimentConfig from_file(const std::string& path);
  // Applies key = value pairs parsed from text (used for defaults + file).
  void validate() const;
  nlohmann::json to_json() const;

  GenParams gen_params(std::uint64_t seed) const;
  ModelDims model_dims() const;
  UnlearnConfig unlearn_config() const;
  BaselineHyper baseline_hyper() const;
  ComponentSet unlearn_scope() const;
  ComponentSet resolved_attack_scope() const;
};

BaselineMethod parse_baseline(const std::string& name);  // throws on "vkd"

}  // namespace vkdlab::cli
