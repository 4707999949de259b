#include "vkdlab/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

#include "vkdlab/parallel.hpp"

namespace vkdlab {

using nlohmann::json;

namespace {

int argmax_lowest_tie(const Vec& logits) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(logits.size()); ++i) {
    if (logits[static_cast<std::size_t>(i)] > logits[static_cast<std::size_t>(best)]) best = i;
  }
  return best;
}

std::string fmt_acc(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

double split_accuracy(const ToyMllm& model, std::span<const Sample> samples) {
  check_compat(model, samples);
  std::vector<std::uint8_t> correct(samples.size());
  par::for_index(samples.size(), [&](std::size_t i) {
    const Sample& s = samples[i];
    const Vec logits = s.kind == TaskKind::Vqa ? model.forward_vqa(*s.image, s.attr)
                                               : model.forward_qa(s.entity, s.attr);
    correct[i] = argmax_lowest_tie(logits) == s.answer ? 1 : 0;
  });
  std::size_t hits = 0;
  for (std::uint8_t c : correct) hits += c;
  return static_cast<double>(hits) / static_cast<double>(samples.size());
}

namespace serial {
double split_accuracy(const ToyMllm& model, std::span<const Sample> samples) {
  check_compat(model, samples);
  std::size_t hits = 0;
  for (const Sample& s : samples) {
    const Vec logits = s.kind == TaskKind::Vqa ? model.forward_vqa(*s.image, s.attr)
                                               : model.forward_qa(s.entity, s.attr);
    if (argmax_lowest_tie(logits) == s.answer) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(samples.size());
}
}  // namespace serial

RunReport evaluate(const ToyMllm& model, const SplitDatasets& data) {
  check_compat(model, data);
  RunReport r;
  const std::vector<Sample>* splits[6] = {&data.forget_vqa,    &data.forget_qa,
                                          &data.retain_vqa,    &data.retain_qa,
                                          &data.realworld_vqa, &data.realworld_qa};
  for (int i = 0; i < 6; ++i) {
    if (!splits[i]->empty()) r.acc[i] = split_accuracy(model, *splits[i]);
  }
  return r;
}

static const char* kSplitNames[6] = {"forget_vqa",    "forget_qa", "retain_vqa",
                                     "retain_qa",     "realworld_vqa", "realworld_qa"};

json RunReport::to_json() const {
  json j;
  for (int i = 0; i < 6; ++i) {
    j["accuracy"][kSplitNames[i]] = acc[i] ? json(*acc[i]) : json(nullptr);
  }
  if (!config_echo.is_null()) j["config"] = config_echo;
  return j;
}

std::string RunReport::csv_header() {
  return "label,seed,forget_vqa,forget_qa,retain_vqa,retain_qa,realworld_vqa,realworld_qa";
}

std::string RunReport::to_csv_row(const std::string& label, std::uint64_t seed) const {
  std::string row = label + "," + std::to_string(seed);
  for (int i = 0; i < 6; ++i) {
    row += ',';
    if (acc[i]) row += fmt_acc(*acc[i]);
  }
  return row;
}

// ---------------------------------------------------------------------------
// ROUGE-L

double rouge_l(std::span<const int> reference, std::span<const int> generated) {
  if (reference.empty() || generated.empty()) return 0.0;
  const std::size_t n = reference.size(), m = generated.size();
  // Two-row LCS table.
  std::vector<std::size_t> prev(m + 1, 0), cur(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      cur[j] = reference[i - 1] == generated[j - 1] ? prev[j - 1] + 1
                                                    : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  const double lcs = static_cast<double>(prev[m]);
  if (lcs == 0.0) return 0.0;
  const double recall = lcs / static_cast<double>(n);
  const double precision = lcs / static_cast<double>(m);
  return 2.0 * recall * precision / (recall + precision);
}

// ---------------------------------------------------------------------------
// relearning attack

double accuracy_gap(const AttackCurve& curve) {
  if (curve.per_epoch.empty()) throw ConfigError("accuracy_gap: empty curve");
  return curve.per_epoch.back() - curve.pre_attack;
}

AttackCurve relearn_attack(const ToyMllm& unlearned, std::span<const Sample> forget_vqa,
                           double fraction, int epochs, double lr, ComponentSet scope,
                           int batch_size, Rng& rng, ToyMllm* final_model) {
  if (epochs < 1) throw ConfigError("relearn_attack: epochs must be >= 1");
  if (batch_size <= 0) throw ConfigError("relearn_attack: bad batch size");
  check_compat(unlearned, forget_vqa);

  std::vector<Sample> tune = subsample(forget_vqa, fraction, rng);
  if (tune.empty()) throw ConfigError("relearn_attack: empty subsample");

  ToyMllm model = unlearned;
  ComponentSet frozen;
  for (Component c : {Component::Vision, Component::Projector, Component::Lm}) {
    if (!scope.contains(c)) frozen = frozen.with(c);
  }
  model.set_frozen(frozen);

  AttackCurve curve;
  curve.pre_attack = split_accuracy(model, forget_vqa);

  const std::size_t total = model.layout().total;
  Vec grad(total);
  std::vector<std::size_t> order(tune.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> losses(tune.size());

  for (int epoch = 0; epoch < epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(batch_size)) {
      const std::size_t count =
          std::min(order.size() - start, static_cast<std::size_t>(batch_size));
      const double w = 1.0 / static_cast<double>(count);
      std::fill(grad.begin(), grad.end(), 0.0);
      par::map_accumulate(count, total, grad.data(), [&](std::size_t k, double* scratch) {
        std::fill(scratch, scratch + total, 0.0);
        const Sample& s = tune[order[start + k]];
        AnswerTrace t = model.vqa_traced(*s.image, s.attr);
        Vec dlogits;
        losses[start + k] = cross_entropy(t.logits(), s.answer, &dlogits);
        model.backward(t, dlogits, scratch, w);
      });
      model.apply_update(grad.data(), lr);
    }
    curve.per_epoch.push_back(split_accuracy(model, forget_vqa));
  }
  curve.accuracy_gap = accuracy_gap(curve);
  if (final_model) *final_model = std::move(model);
  return curve;
}

json AttackCurve::to_json() const {
  return json{{"pre_attack", pre_attack},
              {"per_epoch", per_epoch},
              {"accuracy_gap", accuracy_gap}};
}

std::string AttackCurve::csv_header(int epochs) {
  std::string h = "label,fraction,seed,pre_attack";
  for (int e = 1; e <= epochs; ++e) h += ",epoch" + std::to_string(e);
  h += ",accuracy_gap";
  return h;
}

std::string AttackCurve::to_csv_row(const std::string& label, double fraction,
                                    std::uint64_t seed) const {
  char frac[16];
  std::snprintf(frac, sizeof(frac), "%g", fraction);
  std::string row = label + "," + frac + "," + std::to_string(seed) + "," + fmt_acc(pre_attack);
  for (double v : per_epoch) row += "," + fmt_acc(v);
  row += "," + fmt_acc(accuracy_gap);
  return row;
}

}  // namespace vkdlab
