#include "vkdlab/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include <nlohmann/json.hpp>

#include "vkdlab/jsonio.hpp"
#include "vkdlab/parallel.hpp"

namespace vkdlab {

using nlohmann::json;

// ---------------------------------------------------------------------------
// layout

ParamLayout make_layout(const ModelDims& d) {
  ParamLayout L;
  auto add = [&](Component c, const char* name, std::size_t size) {
    L.blocks.push_back({c, name, L.total, size});
    L.total += size;
  };
  const auto id = static_cast<std::size_t>(d.image_dim);
  const auto h1 = static_cast<std::size_t>(d.h1);
  const auto h2 = static_cast<std::size_t>(d.h2);
  const auto dm = static_cast<std::size_t>(d.d_model);
  const auto fw = static_cast<std::size_t>(d.fusion_width);
  const auto av = static_cast<std::size_t>(d.answer_vocab);

  add(Component::Vision, "layer0.weight", h1 * id);
  add(Component::Vision, "layer0.bias", h1);
  add(Component::Vision, "layer1.weight", h2 * h1);
  add(Component::Vision, "layer1.bias", h2);
  L.vision_end = L.total;
  add(Component::Projector, "layer0.weight", dm * h2);
  add(Component::Projector, "layer0.bias", dm);
  L.vp_end = L.total;
  add(Component::Lm, "name_table", (static_cast<std::size_t>(d.n_names) + 1) * dm);
  add(Component::Lm, "attr_table", static_cast<std::size_t>(d.n_attrs) * dm);
  add(Component::Lm, "no_image", dm);
  add(Component::Lm, "fusion0.weight", fw * 3 * dm);
  add(Component::Lm, "fusion0.bias", fw);
  add(Component::Lm, "fusion1.weight", fw * fw);
  add(Component::Lm, "fusion1.bias", fw);
  add(Component::Lm, "readout.weight", av * fw);
  add(Component::Lm, "readout.bias", av);
  return L;
}

std::size_t ParamLayout::component_begin(Component c) const {
  switch (c) {
    case Component::Vision: return 0;
    case Component::Projector: return vision_end;
    case Component::Lm: return vp_end;
  }
  return 0;
}

std::size_t ParamLayout::component_end(Component c) const {
  switch (c) {
    case Component::Vision: return vision_end;
    case Component::Projector: return vp_end;
    case Component::Lm: return total;
  }
  return 0;
}

// Flat offsets of the individual blocks, in layout order.
namespace {
struct Offsets {
  std::size_t v0w, v0b, v1w, v1b, pw, pb;
  std::size_t name, attr, noimg;
  std::size_t f0w, f0b, f1w, f1b, rw, rb;
};

Offsets offsets_of(const ParamLayout& L) {
  Offsets o{};
  std::size_t* slots[] = {&o.v0w, &o.v0b, &o.v1w, &o.v1b, &o.pw, &o.pb,
                          &o.name, &o.attr, &o.noimg,
                          &o.f0w, &o.f0b, &o.f1w, &o.f1b, &o.rw, &o.rb};
  for (std::size_t i = 0; i < L.blocks.size(); ++i) *slots[i] = L.blocks[i].offset;
  return o;
}
}  // namespace

// ---------------------------------------------------------------------------
// construction

ToyMllm ToyMllm::init(const ModelDims& dims, Rng& rng) {
  if (dims.n_names <= 0 || dims.n_attrs <= 0) {
    throw ConfigError("model needs n_names > 0 and n_attrs > 0");
  }
  ToyMllm m;
  m.dims_ = dims;
  m.rebuild_layout();

  auto init_layer = [&](MlpLayer& L, int out, int in, Activation act) {
    L.weight = Matrix(static_cast<std::size_t>(out), static_cast<std::size_t>(in));
    const double scale =
        (act == Activation::Relu ? std::sqrt(2.0 / in) : std::sqrt(1.0 / in));
    for (double& w : L.weight.data) w = scale * rng.normal();
    L.bias.assign(static_cast<std::size_t>(out), 0.0);
    L.act = act;
  };
  auto init_table = [&](Matrix& t, int rows, int cols) {
    t = Matrix(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols));
    for (double& w : t.data) w = 0.5 * rng.normal();
  };

  init_layer(m.vis0_, dims.h1, dims.image_dim, Activation::Relu);
  init_layer(m.vis1_, dims.h2, dims.h1, Activation::Relu);
  init_layer(m.proj_, dims.d_model, dims.h2, Activation::Identity);
  init_table(m.name_table_, dims.n_names + 1, dims.d_model);
  init_table(m.attr_table_, dims.n_attrs, dims.d_model);
  m.no_image_.resize(static_cast<std::size_t>(dims.d_model));
  for (double& w : m.no_image_) w = 0.5 * rng.normal();
  init_layer(m.fus0_, dims.fusion_width, 3 * dims.d_model, Activation::Relu);
  init_layer(m.fus1_, dims.fusion_width, dims.fusion_width, Activation::Relu);
  init_layer(m.readout_, dims.answer_vocab, dims.fusion_width, Activation::Identity);
  return m;
}

// ---------------------------------------------------------------------------
// forward

Vec ToyMllm::fuse_input(int name_row, int attr, std::span<const double> feature) const {
  const auto dm = static_cast<std::size_t>(dims_.d_model);
  Vec u(3 * dm);
  std::memcpy(u.data(), name_table_.data.data() + static_cast<std::size_t>(name_row) * dm,
              dm * sizeof(double));
  std::memcpy(u.data() + dm, attr_table_.data.data() + static_cast<std::size_t>(attr) * dm,
              dm * sizeof(double));
  std::memcpy(u.data() + 2 * dm, feature.data(), dm * sizeof(double));
  return u;
}

VisualTrace ToyMllm::visual_traced(std::span<const double> image) const {
  if (image.size() != static_cast<std::size_t>(dims_.image_dim)) {
    throw ShapeError("image length " + std::to_string(image.size()) + ", expected " +
                     std::to_string(dims_.image_dim));
  }
  VisualTrace t;
  t.image.assign(image.begin(), image.end());
  t.v0 = mlp_forward(vis0_, t.image);
  t.v1 = mlp_forward(vis1_, t.v0.out);
  t.proj = mlp_forward(proj_, t.v1.out);
  return t;
}

Vec ToyMllm::visual_embedding(std::span<const double> image) const {
  return visual_traced(image).proj.out;
}

static void check_attr(const ModelDims& d, int attr) {
  if (attr < 0 || attr >= d.n_attrs) {
    throw ShapeError("unknown attribute id " + std::to_string(attr));
  }
}

AnswerTrace ToyMllm::vqa_traced(std::span<const double> image, int attr) const {
  check_attr(dims_, attr);
  AnswerTrace t;
  t.visual = visual_traced(image);
  t.name_row = unknown_name_row();
  t.attr = attr;
  t.fuse_in = fuse_input(t.name_row, attr, t.visual->feature());
  t.f0 = mlp_forward(fus0_, t.fuse_in);
  t.f1 = mlp_forward(fus1_, t.f0.out);
  t.readout = mlp_forward(readout_, t.f1.out);
  return t;
}

AnswerTrace ToyMllm::qa_traced(int name_id, int attr) const {
  if (name_id < 0 || name_id >= dims_.n_names) {
    throw ShapeError("unknown entity id " + std::to_string(name_id));
  }
  check_attr(dims_, attr);
  AnswerTrace t;
  t.name_row = name_id;
  t.attr = attr;
  t.fuse_in = fuse_input(name_id, attr, no_image_);
  t.f0 = mlp_forward(fus0_, t.fuse_in);
  t.f1 = mlp_forward(fus1_, t.f0.out);
  t.readout = mlp_forward(readout_, t.f1.out);
  return t;
}

Vec ToyMllm::forward_vqa(std::span<const double> image, int attr) const {
  return vqa_traced(image, attr).readout.out;
}

Vec ToyMllm::forward_qa(int name_id, int attr) const {
  return qa_traced(name_id, attr).readout.out;
}

// ---------------------------------------------------------------------------
// backward

namespace {

// Accumulates weight * (dz x input) / weight * dz at the given flat offsets
// and returns dL/dinput.
Vec layer_backward_acc(const MlpLayer& L, const Vec& x, const MlpTrace& t, const Vec& dy,
                       double* grad, std::size_t woff, std::size_t boff, double weight) {
  const std::size_t out = L.out_dim(), in = L.in_dim();
  Vec dx(in, 0.0);
  for (std::size_t r = 0; r < out; ++r) {
    double dz = dy[r];
    if (L.act == Activation::Relu && t.pre[r] <= 0.0) dz = 0.0;
    if (dz == 0.0) continue;
    grad[boff + r] += weight * dz;
    double* gw = grad + woff + r * in;
    const double* wrow = L.weight.data.data() + r * in;
    const double wdz = weight * dz;
    for (std::size_t c = 0; c < in; ++c) {
      gw[c] += wdz * x[c];
      dx[c] += dz * wrow[c];
    }
  }
  return dx;
}

}  // namespace

void ToyMllm::backward_visual(const VisualTrace& t, const Vec& dfeature, double* grad,
                              double weight) const {
  const Offsets o = offsets_of(layout_);
  Vec dy2 = layer_backward_acc(proj_, t.v1.out, t.proj, dfeature, grad, o.pw, o.pb, weight);
  Vec dy1 = layer_backward_acc(vis1_, t.v0.out, t.v1, dy2, grad, o.v1w, o.v1b, weight);
  layer_backward_acc(vis0_, t.image, t.v0, dy1, grad, o.v0w, o.v0b, weight);
}

void ToyMllm::backward(const AnswerTrace& t, const Vec& dlogits, double* grad,
                       double weight) const {
  const Offsets o = offsets_of(layout_);
  const auto dm = static_cast<std::size_t>(dims_.d_model);

  Vec dh2 = layer_backward_acc(readout_, t.f1.out, t.readout, dlogits, grad, o.rw, o.rb, weight);
  Vec dh1 = layer_backward_acc(fus1_, t.f0.out, t.f1, dh2, grad, o.f1w, o.f1b, weight);
  Vec du = layer_backward_acc(fus0_, t.fuse_in, t.f0, dh1, grad, o.f0w, o.f0b, weight);

  double* gname = grad + o.name + static_cast<std::size_t>(t.name_row) * dm;
  double* gattr = grad + o.attr + static_cast<std::size_t>(t.attr) * dm;
  for (std::size_t i = 0; i < dm; ++i) {
    gname[i] += weight * du[i];
    gattr[i] += weight * du[dm + i];
  }
  if (t.visual) {
    Vec dfeature(du.begin() + static_cast<std::ptrdiff_t>(2 * dm), du.end());
    backward_visual(*t.visual, dfeature, grad, weight);
  } else {
    double* gni = grad + o.noimg;
    for (std::size_t i = 0; i < dm; ++i) gni[i] += weight * du[2 * dm + i];
  }
}

// ---------------------------------------------------------------------------
// flat parameter access

namespace {
struct BlockRef {
  double* ptr;
  std::size_t size;
};
}  // namespace

// Storage spans in layout order; must match make_layout exactly.
struct ModelAccess {
  static std::vector<BlockRef> refs(ToyMllm& m) {
    return {{m.vis0_.weight.data.data(), m.vis0_.weight.data.size()},
            {m.vis0_.bias.data(), m.vis0_.bias.size()},
            {m.vis1_.weight.data.data(), m.vis1_.weight.data.size()},
            {m.vis1_.bias.data(), m.vis1_.bias.size()},
            {m.proj_.weight.data.data(), m.proj_.weight.data.size()},
            {m.proj_.bias.data(), m.proj_.bias.size()},
            {m.name_table_.data.data(), m.name_table_.data.size()},
            {m.attr_table_.data.data(), m.attr_table_.data.size()},
            {m.no_image_.data(), m.no_image_.size()},
            {m.fus0_.weight.data.data(), m.fus0_.weight.data.size()},
            {m.fus0_.bias.data(), m.fus0_.bias.size()},
            {m.fus1_.weight.data.data(), m.fus1_.weight.data.size()},
            {m.fus1_.bias.data(), m.fus1_.bias.size()},
            {m.readout_.weight.data.data(), m.readout_.weight.data.size()},
            {m.readout_.bias.data(), m.readout_.bias.size()}};
  }
};

Vec ToyMllm::to_flat() const {
  Vec flat(layout_.total);
  auto refs = ModelAccess::refs(const_cast<ToyMllm&>(*this));
  std::size_t off = 0;
  for (const BlockRef& b : refs) {
    std::memcpy(flat.data() + off, b.ptr, b.size * sizeof(double));
    off += b.size;
  }
  return flat;
}

void ToyMllm::from_flat(const Vec& flat) {
  if (flat.size() != layout_.total) throw ShapeError("from_flat: length mismatch");
  auto refs = ModelAccess::refs(*this);
  std::size_t off = 0;
  for (const BlockRef& b : refs) {
    std::memcpy(b.ptr, flat.data() + off, b.size * sizeof(double));
    off += b.size;
  }
}

void ToyMllm::copy_component(Component c, const ToyMllm& src) {
  if (!(dims_ == src.dims_)) throw ShapeError("copy_component: dimension mismatch");
  auto dst_refs = ModelAccess::refs(*this);
  auto src_refs = ModelAccess::refs(const_cast<ToyMllm&>(src));
  for (std::size_t i = 0; i < layout_.blocks.size(); ++i) {
    if (layout_.blocks[i].comp != c) continue;
    std::memcpy(dst_refs[i].ptr, src_refs[i].ptr, dst_refs[i].size * sizeof(double));
  }
}

void ToyMllm::apply_update(const double* grad, double lr,
                           const std::vector<std::uint8_t>* vp_mask) {
  if (vp_mask && vp_mask->size() != layout_.vp_end) {
    throw ShapeError("apply_update: mask length mismatch");
  }
  auto refs = ModelAccess::refs(*this);
  for (std::size_t bi = 0; bi < layout_.blocks.size(); ++bi) {
    const ParamBlock& blk = layout_.blocks[bi];
    if (frozen_.contains(blk.comp)) continue;
    const bool vp = blk.offset < layout_.vp_end;
    for (std::size_t k = 0; k < blk.size; ++k) {
      const std::size_t idx = blk.offset + k;
      if (vp) {
        if (vp_mask && !(*vp_mask)[idx]) continue;
        if (!pruned_entries_.empty() && pruned_entries_[idx]) continue;
      }
      refs[bi].ptr[k] -= lr * grad[idx];
    }
  }
}

std::vector<std::uint8_t> prune_entry_mask(const ModelDims& dims, const PruneSet& set) {
  const ParamLayout L = make_layout(dims);
  const Offsets o = offsets_of(L);
  const auto id = static_cast<std::size_t>(dims.image_dim);
  const auto h1 = static_cast<std::size_t>(dims.h1);
  const auto h2 = static_cast<std::size_t>(dims.h2);
  const auto dm = static_cast<std::size_t>(dims.d_model);

  std::vector<std::uint8_t> mask(L.vp_end, 0);
  for (const auto& [layer, n] : set.neurons) {
    const auto nn = static_cast<std::size_t>(n);
    if (layer == 0) {
      if (n < 0 || nn >= h1) throw ShapeError("prune index out of range");
      for (std::size_t c = 0; c < id; ++c) mask[o.v0w + nn * id + c] = 1;
      mask[o.v0b + nn] = 1;
      for (std::size_t r = 0; r < h2; ++r) mask[o.v1w + r * h1 + nn] = 1;
    } else if (layer == 1) {
      if (n < 0 || nn >= h2) throw ShapeError("prune index out of range");
      for (std::size_t c = 0; c < h1; ++c) mask[o.v1w + nn * h1 + c] = 1;
      mask[o.v1b + nn] = 1;
      for (std::size_t r = 0; r < dm; ++r) mask[o.pw + r * h2 + nn] = 1;
    } else {
      throw ShapeError("prune layer index out of range");
    }
  }
  return mask;
}

void ToyMllm::prune_neurons(const PruneSet& set) {
  if (set.empty()) return;
  for (const auto& [layer, n] : set.neurons) {
    std::size_t seen = 0;
    for (const auto& other : set.neurons) {
      if (other.first == layer && other.second == n) ++seen;
    }
    for (const auto& existing : pruned_.neurons) {
      if (existing.first == layer && existing.second == n) ++seen;
    }
    if (seen > 1) throw ConfigError("duplicate pruned neuron");
  }

  const auto marks = prune_entry_mask(dims_, set);
  if (pruned_entries_.empty()) pruned_entries_.assign(layout_.vp_end, 0);
  for (std::size_t i = 0; i < marks.size(); ++i) {
    if (marks[i]) pruned_entries_[i] = 1;
  }
  for (const auto& neuron : set.neurons) pruned_.neurons.push_back(neuron);

  // Zero every registered entry (idempotent for overlapping columns).
  auto refs = ModelAccess::refs(*this);
  for (std::size_t bi = 0; bi < layout_.blocks.size(); ++bi) {
    const ParamBlock& blk = layout_.blocks[bi];
    if (blk.offset >= layout_.vp_end) break;
    for (std::size_t k = 0; k < blk.size; ++k) {
      if (pruned_entries_[blk.offset + k]) refs[bi].ptr[k] = 0.0;
    }
  }
}

ToyMllm clone_frozen(const ToyMllm& model, ComponentSet freeze) {
  ToyMllm copy = model;
  copy.set_frozen(freeze);
  return copy;
}

// ---------------------------------------------------------------------------
// losses

Vec softmax(const Vec& logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  Vec p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - m);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

double cross_entropy(const Vec& logits, int answer, Vec* dlogits) {
  if (answer < 0 || static_cast<std::size_t>(answer) >= logits.size()) {
    throw ShapeError("answer id out of range");
  }
  const double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double l : logits) sum += std::exp(l - m);
  const double lse = m + std::log(sum);
  if (dlogits) {
    dlogits->resize(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
      (*dlogits)[i] = std::exp(logits[i] - lse);
    }
    (*dlogits)[static_cast<std::size_t>(answer)] -= 1.0;
  }
  return lse - logits[static_cast<std::size_t>(answer)];
}

// ---------------------------------------------------------------------------
// compatibility checks

void check_compat(const ToyMllm& model, std::span<const Sample> samples) {
  const ModelDims& d = model.dims();
  for (const Sample& s : samples) {
    if (s.attr < 0 || s.attr >= d.n_attrs) throw ShapeError("sample: bad attribute id");
    if (s.answer < 0 || s.answer >= d.answer_vocab) throw ShapeError("sample: bad answer id");
    if (s.entity < 0 || s.entity >= d.n_names) throw ShapeError("sample: bad entity id");
    if (s.kind == TaskKind::Vqa) {
      if (!s.image || s.image->size() != static_cast<std::size_t>(d.image_dim)) {
        throw ShapeError("sample: bad image");
      }
    } else if (s.image) {
      throw ShapeError("sample: qa sample with image");
    }
  }
}

void check_compat(const ToyMllm& model, const SplitDatasets& data) {
  for (const auto* split : {&data.forget_vqa, &data.forget_qa, &data.retain_vqa,
                            &data.retain_qa, &data.realworld_vqa, &data.realworld_qa}) {
    check_compat(model, *split);
  }
  for (const Entity& e : data.entities) {
    if (e.signature.size() != static_cast<std::size_t>(model.dims().image_dim)) {
      throw ShapeError("entity signature dimension mismatch");
    }
  }
}

// ---------------------------------------------------------------------------
// vanilla training

TrainResult train_vanilla(const ToyMllm& base, const SplitDatasets& data, int epochs,
                          double lr, int batch_size, Rng& rng) {
  if (!base.frozen().empty()) throw ConfigError("train_vanilla requires an unfrozen model");
  if (epochs < 0 || batch_size <= 0) throw ConfigError("bad training hyperparameters");
  check_compat(base, data);

  std::vector<const Sample*> samples;
  for (const auto* split : {&data.forget_vqa, &data.forget_qa, &data.retain_vqa,
                            &data.retain_qa, &data.realworld_vqa, &data.realworld_qa}) {
    for (const Sample& s : *split) samples.push_back(&s);
  }
  if (samples.empty()) throw ConfigError("train_vanilla: empty dataset");

  TrainResult result;
  result.model = base;
  ToyMllm& model = result.model;
  const std::size_t total = model.layout().total;

  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  Vec grad(total);
  std::vector<double> losses(samples.size());

  for (int epoch = 0; epoch < epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
      const std::size_t count =
          std::min(order.size() - start, static_cast<std::size_t>(batch_size));
      const double w = 1.0 / static_cast<double>(count);
      std::fill(grad.begin(), grad.end(), 0.0);
      par::map_accumulate(count, total, grad.data(), [&](std::size_t k, double* scratch) {
        std::fill(scratch, scratch + total, 0.0);
        const Sample& s = *samples[order[start + k]];
        AnswerTrace t = s.kind == TaskKind::Vqa ? model.vqa_traced(*s.image, s.attr)
                                                : model.qa_traced(s.entity, s.attr);
        Vec dlogits;
        losses[start + k] = cross_entropy(t.logits(), s.answer, &dlogits);
        model.backward(t, dlogits, scratch, w);
      });
      for (std::size_t k = 0; k < count; ++k) loss_sum += losses[start + k];
      model.apply_update(grad.data(), lr);
    }
    result.epoch_losses.push_back(loss_sum / static_cast<double>(samples.size()));
  }
  return result;
}

// ---------------------------------------------------------------------------
// checkpoint

namespace {

const char* component_tag(Component c) {
  switch (c) {
    case Component::Vision: return "vision";
    case Component::Projector: return "projector";
    case Component::Lm: return "lm";
  }
  return "?";
}

void append_layer_json(std::string& out, const MlpLayer& L) {
  out += "{\"weight\":";
  append_array(out, L.weight.data);
  out += ",\"bias\":";
  append_array(out, L.bias);
  out += '}';
}

}  // namespace

void ToyMllm::save_checkpoint(const std::string& path, const json& config_echo) const {
  std::string out;
  out += "{\"meta\":{\"dims\":{";
  out += "\"image_dim\":" + std::to_string(dims_.image_dim);
  out += ",\"h1\":" + std::to_string(dims_.h1);
  out += ",\"h2\":" + std::to_string(dims_.h2);
  out += ",\"d_model\":" + std::to_string(dims_.d_model);
  out += ",\"fusion_width\":" + std::to_string(dims_.fusion_width);
  out += ",\"answer_vocab\":" + std::to_string(dims_.answer_vocab);
  out += ",\"n_names\":" + std::to_string(dims_.n_names);
  out += ",\"n_attrs\":" + std::to_string(dims_.n_attrs);
  out += "},\"seed\":" + std::to_string(origin_seed_);
  out += ",\"frozen\":[";
  bool first = true;
  for (Component c : {Component::Vision, Component::Projector, Component::Lm}) {
    if (!frozen_.contains(c)) continue;
    if (!first) out += ',';
    first = false;
    out += '"';
    out += component_tag(c);
    out += '"';
  }
  out += "],\"pruned\":[";
  for (std::size_t i = 0; i < pruned_.neurons.size(); ++i) {
    if (i) out += ',';
    out += '[' + std::to_string(pruned_.neurons[i].first) + ',' +
           std::to_string(pruned_.neurons[i].second) + ']';
  }
  out += ']';
  if (!config_echo.is_null()) {
    out += ",\"config\":";
    out += config_echo.dump();
  }
  out += "},\"params\":{\"vision\":{\"layer0\":";
  append_layer_json(out, vis0_);
  out += ",\"layer1\":";
  append_layer_json(out, vis1_);
  out += "},\"projector\":{\"layer0\":";
  append_layer_json(out, proj_);
  out += "},\"lm\":{\"name_table\":";
  append_array(out, name_table_.data);
  out += ",\"attr_table\":";
  append_array(out, attr_table_.data);
  out += ",\"no_image\":";
  append_array(out, no_image_);
  out += ",\"fusion0\":";
  append_layer_json(out, fus0_);
  out += ",\"fusion1\":";
  append_layer_json(out, fus1_);
  out += ",\"readout\":";
  append_layer_json(out, readout_);
  out += "}}}\n";
  atomic_write(path, out);
}

ToyMllm ToyMllm::load_checkpoint(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw IoError("checkpoint " + path + ": " + e.what());
  }
  try {
    const json& jd = j.at("meta").at("dims");
    ModelDims dims;
    dims.image_dim = jd.at("image_dim").get<int>();
    dims.h1 = jd.at("h1").get<int>();
    dims.h2 = jd.at("h2").get<int>();
    dims.d_model = jd.at("d_model").get<int>();
    dims.fusion_width = jd.at("fusion_width").get<int>();
    dims.answer_vocab = jd.at("answer_vocab").get<int>();
    dims.n_names = jd.at("n_names").get<int>();
    dims.n_attrs = jd.at("n_attrs").get<int>();

    Rng dummy(0);
    ToyMllm m = ToyMllm::init(dims, dummy);
    m.origin_seed_ = j.at("meta").at("seed").get<std::uint64_t>();

    auto load_layer = [&](MlpLayer& L, const json& jl) {
      Vec w = jl.at("weight").get<Vec>();
      Vec b = jl.at("bias").get<Vec>();
      if (w.size() != L.weight.data.size() || b.size() != L.bias.size()) {
        throw IoError("checkpoint layer size mismatch");
      }
      L.weight.data = std::move(w);
      L.bias = std::move(b);
    };
    const json& jp = j.at("params");
    load_layer(m.vis0_, jp.at("vision").at("layer0"));
    load_layer(m.vis1_, jp.at("vision").at("layer1"));
    load_layer(m.proj_, jp.at("projector").at("layer0"));
    const json& jl = jp.at("lm");
    auto load_array = [&](Vec& dst, const json& ja) {
      Vec v = ja.get<Vec>();
      if (v.size() != dst.size()) throw IoError("checkpoint array size mismatch");
      dst = std::move(v);
    };
    load_array(m.name_table_.data, jl.at("name_table"));
    load_array(m.attr_table_.data, jl.at("attr_table"));
    load_array(m.no_image_, jl.at("no_image"));
    load_layer(m.fus0_, jl.at("fusion0"));
    load_layer(m.fus1_, jl.at("fusion1"));
    load_layer(m.readout_, jl.at("readout"));

    ComponentSet frozen;
    for (const auto& tag : j.at("meta").at("frozen")) {
      const std::string t = tag.get<std::string>();
      if (t == "vision") frozen = frozen.with(Component::Vision);
      else if (t == "projector") frozen = frozen.with(Component::Projector);
      else if (t == "lm") frozen = frozen.with(Component::Lm);
      else throw IoError("checkpoint: unknown frozen tag '" + t + "'");
    }
    m.frozen_ = frozen;

    PruneSet pruned;
    for (const auto& pair : j.at("meta").at("pruned")) {
      pruned.neurons.emplace_back(pair.at(0).get<int>(), pair.at(1).get<int>());
    }
    // Re-registering also re-zeroes the entries; loaded values there are 0
    // already for any checkpoint this library wrote.
    m.prune_neurons(pruned);
    return m;
  } catch (const json::exception& e) {
    throw IoError("checkpoint " + path + ": " + e.what());
  }
}

}  // namespace vkdlab
