#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "vkdlab/fdcheck.hpp"
#include "vkdlab/jsonio.hpp"
#include "vkdlab/model.hpp"

using namespace vkdlab;

namespace {

ModelDims tiny_dims() {
  ModelDims d;
  d.image_dim = 4;
  d.h1 = 6;
  d.h2 = 5;
  d.d_model = 4;
  d.fusion_width = 8;
  d.answer_vocab = 3;
  d.n_names = 4;
  d.n_attrs = 2;
  return d;
}

SplitDatasets tiny_data(std::uint64_t seed = 11) {
  GenParams p;
  p.seed = seed;
  p.n_entities = 3;
  p.n_attributes = 2;
  p.forget_ratio = 0.2;  // 1 forget entity, 2 retain
  p.views_per_entity = 2;
  p.n_realworld = 1;
  p.answer_vocab = 3;
  p.image_dim = 4;
  return generate(p);
}

}  // namespace

TEST_CASE("component partition covers every parameter exactly once") {
  const ParamLayout L = make_layout(tiny_dims());
  const std::size_t sum = L.component_size(Component::Vision) +
                          L.component_size(Component::Projector) +
                          L.component_size(Component::Lm);
  CHECK(sum == L.total);
  std::size_t block_sum = 0;
  for (const ParamBlock& b : L.blocks) block_sum += b.size;
  CHECK(block_sum == L.total);
}

TEST_CASE("to_flat/from_flat round trip") {
  Rng rng(1);
  ToyMllm m = ToyMllm::init(tiny_dims(), rng);
  Vec flat = m.to_flat();
  CHECK(flat.size() == m.layout().total);
  ToyMllm other = ToyMllm::init(tiny_dims(), rng);
  other.from_flat(flat);
  CHECK(other.to_flat() == flat);
}

TEST_CASE("visual_embedding of zero model is zero") {
  Rng rng(2);
  ToyMllm m = ToyMllm::init(tiny_dims(), rng);
  m.from_flat(Vec(m.layout().total, 0.0));
  Vec f = m.visual_embedding(Vec{1.0, -2.0, 0.5, 3.0});
  for (double v : f) CHECK(v == 0.0);
}

TEST_CASE("visual_embedding is pure and W-independent") {
  Rng rng(3);
  ToyMllm m = ToyMllm::init(tiny_dims(), rng);
  Vec img = {0.3, -0.7, 1.1, 0.2};
  Vec a = m.visual_embedding(img);
  CHECK(m.visual_embedding(img) == a);

  // Perturb every W parameter; the visual feature must not move.
  ToyMllm perturbed = m;
  Vec flat = perturbed.to_flat();
  const ParamLayout& L = perturbed.layout();
  for (std::size_t i = L.component_begin(Component::Lm); i < L.total; ++i) flat[i] += 1.0;
  perturbed.from_flat(flat);
  CHECK(perturbed.visual_embedding(img) == a);
}

TEST_CASE("forward paths validate ids and shapes") {
  Rng rng(4);
  ToyMllm m = ToyMllm::init(tiny_dims(), rng);
  Vec img(4, 0.0);
  CHECK_NOTHROW(m.forward_vqa(img, 0));
  CHECK_THROWS_AS(m.forward_vqa(img, 7), ShapeError);
  CHECK_THROWS_AS(m.forward_vqa(Vec(3, 0.0), 0), ShapeError);
  CHECK_THROWS_AS(m.forward_qa(99, 0), ShapeError);
  CHECK_THROWS_AS(m.forward_qa(-1, 0), ShapeError);
  // Zero image on an untrained model: finite logits, no error.
  for (double v : m.forward_vqa(img, 0)) CHECK(std::isfinite(v));
}

TEST_CASE("qa path is exactly invariant under V and P changes") {
  Rng rng(5);
  ToyMllm m = ToyMllm::init(tiny_dims(), rng);
  Vec logits = m.forward_qa(1, 1);
  ToyMllm mutated = m;
  Vec flat = mutated.to_flat();
  for (std::size_t i = 0; i < mutated.layout().vp_end; ++i) flat[i] = -flat[i] + 0.25;
  mutated.from_flat(flat);
  CHECK(mutated.forward_qa(1, 1) == logits);
}

TEST_CASE("clone_frozen freezes updates per component") {
  Rng rng(6);
  ToyMllm m = ToyMllm::init(tiny_dims(), rng);
  ToyMllm frozen = clone_frozen(m, ComponentSet::of(Component::Lm));
  CHECK(frozen.frozen().contains(Component::Lm));
  Vec grad(m.layout().total, 1.0);
  frozen.apply_update(grad.data(), 0.1);
  const Vec before = m.to_flat(), after = frozen.to_flat();
  const ParamLayout& L = m.layout();
  for (std::size_t i = 0; i < L.total; ++i) {
    if (i >= L.component_begin(Component::Lm)) {
      CHECK(after[i] == before[i]);  // frozen: bitwise unchanged
    } else {
      CHECK(after[i] == before[i] - 0.1);
    }
  }
  // Freeze everything: no update at all.
  ToyMllm all_frozen = clone_frozen(m, ComponentSet::all());
  all_frozen.apply_update(grad.data(), 0.1);
  CHECK(all_frozen.to_flat() == before);
}

TEST_CASE("cross_entropy matches a direct softmax computation") {
  Vec logits = {2.0, -1.0, 0.5};
  Vec dlogits;
  const double loss = cross_entropy(logits, 2, &dlogits);
  Vec p = softmax(logits);
  CHECK(loss == doctest::Approx(-std::log(p[2])).epsilon(1e-12));
  CHECK(dlogits[0] == doctest::Approx(p[0]));
  CHECK(dlogits[2] == doctest::Approx(p[2] - 1.0));
  CHECK_THROWS_AS(cross_entropy(logits, 5), ShapeError);
}

TEST_CASE("model backward matches finite differences") {
  Rng rng(7);
  ToyMllm m = ToyMllm::init(tiny_dims(), rng);
  SplitDatasets data = tiny_data();
  const Sample& vqa = data.retain_vqa.front();
  const Sample& qa = data.retain_qa.front();

  for (const Sample* s : {&vqa, &qa}) {
    Vec analytic(m.layout().total, 0.0);
    AnswerTrace t = s->kind == TaskKind::Vqa ? m.vqa_traced(*s->image, s->attr)
                                             : m.qa_traced(s->entity, s->attr);
    Vec dlogits;
    cross_entropy(t.logits(), s->answer, &dlogits);
    m.backward(t, dlogits, analytic.data());

    ToyMllm probe = m;
    auto f = [&](const Vec& theta) {
      probe.from_flat(theta);
      const Vec logits = s->kind == TaskKind::Vqa ? probe.forward_vqa(*s->image, s->attr)
                                                  : probe.forward_qa(s->entity, s->attr);
      return cross_entropy(logits, s->answer);
    };
    Vec fd = fd_gradient(f, m.to_flat(), 1e-5);
    CHECK(max_rel_error(analytic, fd) < 1e-4);
  }
}

TEST_CASE("train_vanilla contracts") {
  Rng rng(8);
  ToyMllm base = ToyMllm::init(tiny_dims(), rng);
  SplitDatasets data = tiny_data();

  SUBCASE("zero epochs leaves parameters unchanged") {
    Rng t(1);
    TrainResult r = train_vanilla(base, data, 0, 0.05, 8, t);
    CHECK(r.model.to_flat() == base.to_flat());
    CHECK(r.epoch_losses.empty());
  }
  SUBCASE("same seed twice gives bit-identical models") {
    Rng t1(2), t2(2);
    TrainResult a = train_vanilla(base, data, 4, 0.05, 8, t1);
    TrainResult b = train_vanilla(base, data, 4, 0.05, 8, t2);
    CHECK(a.model.to_flat() == b.model.to_flat());
    CHECK(a.epoch_losses == b.epoch_losses);
  }
  SUBCASE("training loss decreases over the first epochs") {
    Rng t(3);
    TrainResult r = train_vanilla(base, data, 5, 0.05, 8, t);
    for (std::size_t e = 1; e < r.epoch_losses.size(); ++e) {
      CHECK(r.epoch_losses[e] < r.epoch_losses[e - 1]);
    }
  }
  SUBCASE("frozen model is rejected") {
    Rng t(4);
    ToyMllm frozen = clone_frozen(base, ComponentSet::of(Component::Vision));
    CHECK_THROWS_AS(train_vanilla(frozen, data, 1, 0.05, 8, t), ConfigError);
  }
  SUBCASE("empty dataset is rejected") {
    Rng t(5);
    SplitDatasets empty;
    CHECK_THROWS_AS(train_vanilla(base, empty, 1, 0.05, 8, t), ConfigError);
  }
}

TEST_CASE("checkpoint round trip is bit exact") {
  Rng rng(9);
  ToyMllm m = ToyMllm::init(tiny_dims(), rng);
  m.set_origin_seed(42);
  m.set_frozen(ComponentSet::of(Component::Lm));
  PruneSet prune;
  prune.neurons = {{1, 0}, {0, 3}};
  m.prune_neurons(prune);

  const std::string path =
      (std::filesystem::temp_directory_path() / "vkdlab_ckpt.json").string();
  m.save_checkpoint(path);
  ToyMllm loaded = ToyMllm::load_checkpoint(path);
  CHECK(loaded.to_flat() == m.to_flat());
  CHECK(loaded.origin_seed() == 42);
  CHECK(loaded.frozen() == m.frozen());
  CHECK(loaded.pruned().neurons == m.pruned().neurons);
  CHECK(loaded.pruned_entries() == m.pruned_entries());

  // Byte-stable on rewrite.
  const std::string bytes = read_file(path);
  loaded.save_checkpoint(path);
  CHECK(read_file(path) == bytes);
  std::filesystem::remove(path);
}
