#include <doctest.h>

#include "vkdlab/fdcheck.hpp"
#include "vkdlab/unlearn.hpp"

using namespace vkdlab;

namespace {

ModelDims tiny_dims(int d_model = 4) {
  ModelDims d;
  d.image_dim = 4;
  d.h1 = 6;
  d.h2 = 5;
  d.d_model = d_model;
  d.fusion_width = 8;
  d.answer_vocab = 3;
  d.n_names = 4;
  d.n_attrs = 2;
  return d;
}

SplitDatasets tiny_data(std::uint64_t seed = 21) {
  GenParams p;
  p.seed = seed;
  p.n_entities = 3;
  p.n_attributes = 2;
  p.forget_ratio = 0.2;
  p.views_per_entity = 2;
  p.n_realworld = 1;
  p.answer_vocab = 3;
  p.image_dim = 4;
  return generate(p);
}

// Model whose visual feature is a constant vector for any image: zero vision
// weights, projector bias = value.
ToyMllm constant_feature_model(const Vec& feature) {
  ModelDims d = tiny_dims(static_cast<int>(feature.size()));
  Rng rng(0);
  ToyMllm m = ToyMllm::init(d, rng);
  Vec flat(m.layout().total, 0.0);
  const ParamLayout& L = m.layout();
  for (const ParamBlock& b : L.blocks) {
    if (b.comp == Component::Projector && b.name == "layer0.bias") {
      for (std::size_t i = 0; i < feature.size(); ++i) flat[b.offset + i] = feature[i];
    }
  }
  m.from_flat(flat);
  return m;
}

}  // namespace

TEST_CASE("vkd_loss is zero when student equals teacher") {
  Rng rng(1);
  ToyMllm m = ToyMllm::init(tiny_dims(), rng);
  SplitDatasets data = tiny_data();
  CHECK(vkd_loss(m, m, data.retain_vqa) == 0.0);

  // Gradient is exactly zero too.
  Vec grad(m.layout().total, 0.0);
  vkd_loss_grad(m, m, data.retain_vqa, grad.data(), 0.3);
  for (double g : grad) CHECK(g == 0.0);
}

TEST_CASE("vkd_loss squared-distance arithmetic") {
  SplitDatasets data = tiny_data();
  // f = [1,0,0,0], t = [0,1,0,0] -> squared distance 2
  ToyMllm student = constant_feature_model(Vec{1, 0, 0, 0});
  ToyMllm teacher = constant_feature_model(Vec{0, 1, 0, 0});
  CHECK(vkd_loss(student, teacher, data.retain_vqa) == 2.0);
  // f = [3,0,0,0], t = [1,0,0,0] -> 4
  ToyMllm s2 = constant_feature_model(Vec{3, 0, 0, 0});
  ToyMllm t2 = constant_feature_model(Vec{1, 0, 0, 0});
  CHECK(vkd_loss(s2, t2, data.retain_vqa) == 4.0);
}

TEST_CASE("vkd_loss rejects bad inputs") {
  Rng rng(2);
  ToyMllm m = ToyMllm::init(tiny_dims(), rng);
  SplitDatasets data = tiny_data();
  CHECK_THROWS_AS(vkd_loss(m, m, std::span<const Sample>{}), ConfigError);
  ToyMllm other = ToyMllm::init(tiny_dims(8), rng);
  CHECK_THROWS_AS(vkd_loss(m, other, data.retain_vqa), ShapeError);
}

TEST_CASE("output_loss combination arithmetic") {
  Rng rng(3);
  ToyMllm m = ToyMllm::init(tiny_dims(), rng);
  SplitDatasets data = tiny_data();

  // All four terms computed from the same single batch are equal, so the
  // composite reduces to (3 - alpha) * c; alpha = 1 gives 2c (the forget term
  // cancels one preservation term exactly).
  std::vector<Sample> one = {data.retain_vqa.front()};
  Batches same{one, one, one, one};
  LossTerms t1 = output_loss(m, same, 1.0);
  CHECK(t1.forget_vqa_ce == t1.retain_vqa_ce);
  CHECK(t1.output == doctest::Approx(2.0 * t1.forget_vqa_ce).epsilon(1e-12));

  LossTerms t2 = output_loss(m, same, 1.25);
  CHECK(t2.output ==
        doctest::Approx(-1.25 * t2.forget_vqa_ce + t2.forget_qa_ce + t2.retain_vqa_ce +
                        t2.retain_qa_ce)
            .epsilon(1e-12));

  // The worked linear combination: terms 1,1,1,1 with alpha 1.25 -> 1.75.
  CHECK(-1.25 * 1.0 + 1.0 + 1.0 + 1.0 == 1.75);

  Batches mixed{data.forget_vqa, data.forget_qa, data.retain_vqa, data.retain_qa};
  LossTerms t3 = output_loss(m, mixed, 1.25);
  CHECK(t3.output == doctest::Approx(-1.25 * t3.forget_vqa_ce + t3.forget_qa_ce +
                                     t3.retain_vqa_ce + t3.retain_qa_ce)
                         .epsilon(1e-12));

  CHECK_THROWS_AS(output_loss(m, Batches{{}, one, one, one}, 1.25), ConfigError);
  CHECK_THROWS_AS(output_loss(m, mixed, 0.0), ConfigError);
}

TEST_CASE("total_loss composition") {
  Rng rng(4);
  ToyMllm student = ToyMllm::init(tiny_dims(), rng);
  ToyMllm teacher = ToyMllm::init(tiny_dims(), rng);
  SplitDatasets data = tiny_data();
  Batches b{data.forget_vqa, data.forget_qa, data.retain_vqa, data.retain_qa};

  LossTerms out = output_loss(student, b, 1.25);
  LossTerms t0 = total_loss(student, teacher, b, 1.25, 0.0);
  CHECK(t0.total == out.output);  // beta = 0 -> exactly the output loss

  LossTerms t = total_loss(student, teacher, b, 1.25, 0.3);
  CHECK(t.total == doctest::Approx(t.output + 0.3 * t.vkd).epsilon(1e-12));
  CHECK(t.vkd > 0.0);

  // Student == teacher: vkd term vanishes, total == output.
  LossTerms ts = total_loss(student, student, b, 1.25, 0.3);
  CHECK(ts.vkd == 0.0);
  CHECK(ts.total == ts.output);

  // The worked combination: output 1.75, vkd 2, beta 0.3 -> 2.35.
  CHECK(1.75 + 0.3 * 2.0 == 2.35);
}

TEST_CASE("output_loss gradient matches finite differences") {
  Rng rng(5);
  ToyMllm m = ToyMllm::init(tiny_dims(), rng);
  SplitDatasets data = tiny_data();
  Batches b{data.forget_vqa, data.forget_qa, data.retain_vqa, data.retain_qa};

  Vec grad;
  output_loss(m, b, 1.25, &grad);
  ToyMllm probe = m;
  auto f = [&](const Vec& theta) {
    probe.from_flat(theta);
    return output_loss(probe, b, 1.25).output;
  };
  Vec fd = fd_gradient(f, m.to_flat(), 1e-5);
  CHECK(max_rel_error(grad, fd) < 1e-4);
}

TEST_CASE("total_loss gradient matches finite differences with beta > 0") {
  Rng rng(6);
  ToyMllm student = ToyMllm::init(tiny_dims(), rng);
  ToyMllm teacher = ToyMllm::init(tiny_dims(), rng);
  SplitDatasets data = tiny_data();
  Batches b{data.forget_vqa, data.forget_qa, data.retain_vqa, data.retain_qa};

  Vec grad;
  total_loss(student, teacher, b, 1.25, 0.7, &grad);
  ToyMllm probe = student;
  auto f = [&](const Vec& theta) {
    probe.from_flat(theta);
    return total_loss(probe, teacher, b, 1.25, 0.7).total;
  };
  Vec fd = fd_gradient(f, student.to_flat(), 1e-5);
  CHECK(max_rel_error(grad, fd) < 1e-4);
}

TEST_CASE("forget-term gradient output is the forget CE gradient") {
  Rng rng(7);
  ToyMllm m = ToyMllm::init(tiny_dims(), rng);
  SplitDatasets data = tiny_data();
  Batches b{data.forget_vqa, data.forget_qa, data.retain_vqa, data.retain_qa};
  Vec grad, fgrad;
  output_loss(m, b, 2.0, &grad, &fgrad);

  ToyMllm probe = m;
  auto f = [&](const Vec& theta) {
    probe.from_flat(theta);
    double sum = 0.0;
    for (const Sample& s : data.forget_vqa) {
      sum += cross_entropy(probe.forward_vqa(*s.image, s.attr), s.answer);
    }
    return sum / static_cast<double>(data.forget_vqa.size());
  };
  Vec fd = fd_gradient(f, m.to_flat(), 1e-5);
  CHECK(max_rel_error(fgrad, fd) < 1e-4);
}
