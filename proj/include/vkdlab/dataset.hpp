// Synthetic multimodal benchmark: fictitious entities with a canonical
// visual signature and closed-vocabulary textual attributes, split into
// forget / retain / real-world subsets with VQA and QA items.
//
// Generation is single-threaded and fully determined by the seed; the
// real-world pool is drawn from an independent seed stream so it shares the
// attribute schema but no entities with the fictitious pool.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "vkdlab/matrix.hpp"
#include "vkdlab/rng.hpp"

namespace vkdlab {

struct Entity {
  int name_id = 0;
  Vec signature;                                  // canonical visual pattern
  std::vector<std::pair<int, int>> attributes;    // (attribute_id, answer_id)
};

enum class TaskKind { Vqa, Qa };

struct Sample {
  TaskKind kind = TaskKind::Vqa;
  int entity = 0;
  std::optional<Vec> image;  // present iff kind == Vqa
  int attr = 0;
  int answer = 0;

  bool operator==(const Sample&) const = default;
};

struct SplitDatasets {
  std::vector<Entity> entities;  // indexed by name_id; forget+retain+realworld
  std::vector<Sample> forget_vqa, forget_qa;
  std::vector<Sample> retain_vqa, retain_qa;
  std::vector<Sample> realworld_vqa, realworld_qa;

  int n_forget_entities = 0;
  int n_retain_entities = 0;
  int n_realworld_entities = 0;

  int total_entities() const {
    return n_forget_entities + n_retain_entities + n_realworld_entities;
  }
  const Vec& signature_of(int name_id) const;
};

struct GenParams {
  std::uint64_t seed = 0;
  int n_entities = 40;       // fictitious pool (forget + retain)
  int n_attributes = 4;
  double forget_ratio = 0.05;
  int views_per_entity = 6;
  double noise_sigma = 0.1;
  int n_realworld = 10;
  int answer_vocab = 8;
  int image_dim = 32;
  int max_rejects = 10000;   // per-signature rejection budget
};

SplitDatasets generate(const GenParams& p);

// JSON-Lines; entity records first, then one sample per line with its split
// tag. Doubles are written with 17 significant digits so load(save(x)) == x
// down to the last bit. A non-null meta document (run config echo) becomes a
// leading meta line, ignored by load().
void save(const SplitDatasets& data, const std::string& path,
          const nlohmann::json& meta = nullptr);
SplitDatasets load(const std::string& path);

// Uniform sample without replacement, ceil(fraction * n) items, order given
// by the shuffle (fraction = 1 yields a permutation).
std::vector<Sample> subsample(std::span<const Sample> split, double fraction, Rng& rng);

}  // namespace vkdlab
