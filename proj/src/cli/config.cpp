#include "cli/config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

#include "vkdlab/errors.hpp"
#include "vkdlab/jsonio.hpp"

namespace vkdlab::cli {

using nlohmann::json;

// ---------------------------------------------------------------------------
// TOML-subset parser: [sections], key = value, values are strings, booleans,
// numbers, or flat arrays thereof, with # comments.

namespace {

struct TomlValue {
  enum class Kind { String, Number, Bool, NumberArray, StringArray } kind;
  std::string str;
  double num = 0.0;
  bool flag = false;
  std::vector<double> nums;
  std::vector<std::string> strs;
  int line = 0;
};

using TomlTable = std::map<std::string, std::map<std::string, TomlValue>>;

std::string strip(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

// Removes a trailing comment that is not inside a string literal.
std::string strip_comment(const std::string& s) {
  bool in_str = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"') in_str = !in_str;
    if (s[i] == '#' && !in_str) return s.substr(0, i);
  }
  return s;
}

TomlValue parse_scalar(const std::string& tok, int line) {
  TomlValue v;
  v.line = line;
  if (tok.size() >= 2 && tok.front() == '"' && tok.back() == '"') {
    v.kind = TomlValue::Kind::String;
    v.str = tok.substr(1, tok.size() - 2);
    return v;
  }
  if (tok == "true" || tok == "false") {
    v.kind = TomlValue::Kind::Bool;
    v.flag = tok == "true";
    return v;
  }
  try {
    std::size_t used = 0;
    v.num = std::stod(tok, &used);
    if (used != tok.size()) throw std::invalid_argument(tok);
  } catch (const std::exception&) {
    throw ConfigError("config line " + std::to_string(line) + ": bad value '" + tok + "'");
  }
  v.kind = TomlValue::Kind::Number;
  return v;
}

TomlValue parse_value(const std::string& text, int line) {
  if (!text.empty() && text.front() == '[') {
    if (text.back() != ']') {
      throw ConfigError("config line " + std::to_string(line) + ": unterminated array");
    }
    TomlValue v;
    v.line = line;
    v.kind = TomlValue::Kind::NumberArray;
    const std::string inner = strip(text.substr(1, text.size() - 2));
    if (inner.empty()) return v;
    std::stringstream ss(inner);
    std::string item;
    bool first = true;
    while (std::getline(ss, item, ',')) {
      TomlValue s = parse_scalar(strip(item), line);
      if (s.kind == TomlValue::Kind::String) {
        if (first) v.kind = TomlValue::Kind::StringArray;
        if (v.kind != TomlValue::Kind::StringArray) {
          throw ConfigError("config line " + std::to_string(line) + ": mixed array");
        }
        v.strs.push_back(s.str);
      } else if (s.kind == TomlValue::Kind::Number) {
        if (v.kind != TomlValue::Kind::NumberArray) {
          throw ConfigError("config line " + std::to_string(line) + ": mixed array");
        }
        v.nums.push_back(s.num);
      } else {
        throw ConfigError("config line " + std::to_string(line) + ": bad array element");
      }
      first = false;
    }
    return v;
  }
  return parse_scalar(text, line);
}

TomlTable parse_toml(const std::string& text) {
  TomlTable table;
  std::istringstream in(text);
  std::string raw;
  std::string section;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = strip(strip_comment(raw));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError("config line " + std::to_string(line_no) + ": bad section header");
      }
      section = strip(line.substr(1, line.size() - 2));
      if (section.empty()) {
        throw ConfigError("config line " + std::to_string(line_no) + ": empty section name");
      }
      table[section];  // sections may be empty
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = strip(line.substr(0, eq));
    if (key.empty()) {
      throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    }
    if (table[section].count(key)) {
      throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" +
                        key + "'");
    }
    table[section][key] = parse_value(strip(line.substr(eq + 1)), line_no);
  }
  return table;
}

// Typed accessors that consume keys; whatever is left over is unknown.
struct SectionReader {
  std::map<std::string, TomlValue>* kv = nullptr;
  std::string section;

  std::optional<TomlValue> take(const std::string& key) {
    if (!kv) return std::nullopt;
    auto it = kv->find(key);
    if (it == kv->end()) return std::nullopt;
    TomlValue v = it->second;
    kv->erase(it);
    return v;
  }

  void number(const std::string& key, double& out) {
    if (auto v = take(key)) {
      if (v->kind != TomlValue::Kind::Number) bad(key, *v, "a number");
      out = v->num;
    }
  }
  void integer(const std::string& key, int& out) {
    if (auto v = take(key)) {
      if (v->kind != TomlValue::Kind::Number || v->num != std::floor(v->num)) {
        bad(key, *v, "an integer");
      }
      out = static_cast<int>(v->num);
    }
  }
  void string(const std::string& key, std::string& out) {
    if (auto v = take(key)) {
      if (v->kind != TomlValue::Kind::String) bad(key, *v, "a string");
      out = v->str;
    }
  }
  void boolean(const std::string& key, bool& out) {
    if (auto v = take(key)) {
      if (v->kind != TomlValue::Kind::Bool) bad(key, *v, "a boolean");
      out = v->flag;
    }
  }
  void number_array(const std::string& key, std::vector<double>& out) {
    if (auto v = take(key)) {
      if (v->kind != TomlValue::Kind::NumberArray) bad(key, *v, "an array of numbers");
      out = v->nums;
    }
  }
  void optional_number(const std::string& key, std::optional<double>& out) {
    if (auto v = take(key)) {
      if (v->kind != TomlValue::Kind::Number) bad(key, *v, "a number");
      out = v->num;
    }
  }

  [[noreturn]] void bad(const std::string& key, const TomlValue& v, const char* want) {
    throw ConfigError("config line " + std::to_string(v.line) + ": [" + section + "] " +
                      key + " must be " + want);
  }
};

}  // namespace

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  TomlTable table = parse_toml(read_file(path));
  ExperimentConfig c;

  auto reader = [&](const char* name) {
    SectionReader r;
    r.section = name;
    auto it = table.find(name);
    if (it != table.end()) r.kv = &it->second;
    return r;
  };

  {
    SectionReader r = reader("dataset");
    r.integer("n_entities", c.n_entities);
    r.integer("n_attributes", c.n_attributes);
    r.number("forget_ratio", c.forget_ratio);
    r.integer("views_per_entity", c.views_per_entity);
    r.number("noise_sigma", c.noise_sigma);
    r.integer("n_realworld", c.n_realworld);
    r.integer("answer_vocab", c.answer_vocab);
    r.integer("image_dim", c.image_dim);
  }
  {
    SectionReader r = reader("model");
    r.integer("h1", c.h1);
    r.integer("h2", c.h2);
    r.integer("d_model", c.d_model);
    r.integer("fusion_width", c.fusion_width);
  }
  {
    SectionReader r = reader("train");
    r.integer("epochs", c.train_epochs);
    r.number("lr", c.train_lr);
    r.integer("batch_size", c.train_batch);
  }
  {
    SectionReader r = reader("unlearn");
    r.string("method", c.method);
    r.number("alpha", c.alpha);
    r.number("beta", c.beta);
    r.number("d_fisher", c.d_fisher);
    std::optional<double> ratio, dimp;
    r.optional_number("prune_ratio", ratio);
    r.optional_number("d_importance", dimp);
    if (ratio || dimp) {
      c.prune_ratio = ratio;
      c.d_importance = dimp;
    }
    r.number("lr", c.unlearn_lr);
    r.integer("epochs", c.unlearn_epochs);
    r.number("forget_target", c.forget_target);
    r.integer("batch_size", c.unlearn_batch);
    r.integer("retain_batch_size", c.retain_batch);
    r.string("scope", c.scope);
    r.string("strategy", c.strategy);
    r.number("eps", c.eps);
    r.string("mask_gate", c.mask_gate);
    r.string("qa_probe", c.qa_probe);
    r.boolean("prune_all_layers", c.prune_all_layers);
    r.number("npo_beta", c.npo_beta);
  }
  {
    SectionReader r = reader("attack");
    r.number_array("fractions", c.attack_fractions);
    r.integer("epochs", c.attack_epochs);
    r.number("lr", c.attack_lr);
    r.integer("batch_size", c.attack_batch);
    r.string("scope", c.attack_scope);
  }
  {
    SectionReader r = reader("sweep");
    r.string("parameter", c.sweep_parameter);
    r.number_array("grid", c.sweep_grid);
  }
  {
    SectionReader r = reader("run");
    std::vector<double> seeds;
    r.number_array("seeds", seeds);
    if (!seeds.empty() || table.count("run")) {
      if (!seeds.empty()) {
        c.seeds.clear();
        for (double s : seeds) {
          if (s != std::floor(s) || s < 0) throw ConfigError("run.seeds must be non-negative integers");
          c.seeds.push_back(static_cast<std::uint64_t>(s));
        }
      }
    }
    r.string("out", c.out_dir);
    r.integer("threads", c.threads);
  }

  // Anything still present is unknown.
  for (const auto& [section, kv] : table) {
    static const char* known[] = {"dataset", "model", "train", "unlearn",
                                  "attack", "sweep", "run"};
    if (std::find_if(std::begin(known), std::end(known), [&](const char* k) {
          return section == k;
        }) == std::end(known)) {
      throw ConfigError("unknown config section [" + section + "]");
    }
    if (!kv.empty()) {
      throw ConfigError("config line " + std::to_string(kv.begin()->second.line) +
                        ": unknown key '" + kv.begin()->first + "' in [" + section + "]");
    }
  }

  c.validate();
  return c;
}

void ExperimentConfig::validate() const {
  if (n_entities <= 0 || n_attributes <= 0 || views_per_entity <= 0 || n_realworld < 0) {
    throw ConfigError("dataset sizes must be positive");
  }
  if (!(forget_ratio > 0.0 && forget_ratio < 1.0)) {
    throw ConfigError("forget_ratio must be in (0, 1)");
  }
  if (noise_sigma < 0.0) throw ConfigError("noise_sigma must be >= 0");
  if (answer_vocab <= 1 || image_dim <= 0) throw ConfigError("bad vocab/image_dim");
  if (h1 <= 0 || h2 <= 0 || d_model <= 0 || fusion_width <= 0) {
    throw ConfigError("model dims must be positive");
  }
  if (train_epochs < 0 || train_batch <= 0 || !(train_lr > 0.0)) {
    throw ConfigError("bad [train] settings");
  }
  static const char* methods[] = {"vkd", "ga", "ga_diff", "kl_min", "npo", "prune_only"};
  if (std::find_if(std::begin(methods), std::end(methods),
                   [&](const char* m) { return method == m; }) == std::end(methods)) {
    throw ConfigError("unknown method '" + method + "'");
  }
  if (scope != "vision" && scope != "full") throw ConfigError("scope must be vision|full");
  if (method == "vkd" && scope != "vision") {
    throw ConfigError("method vkd fine-tunes the visual side only; scope must be 'vision'");
  }
  unlearn_config().validate();
  if (!(npo_beta > 0.0)) throw ConfigError("npo_beta must be > 0");
  if (attack_fractions.empty()) throw ConfigError("attack.fractions must be non-empty");
  for (double f : attack_fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("attack fractions must be in (0, 1]");
  }
  if (attack_epochs < 1 || attack_batch <= 0 || attack_lr < 0.0) {
    throw ConfigError("bad [attack] settings");
  }
  if (attack_scope != "method" && attack_scope != "full") {
    throw ConfigError("attack.scope must be method|full");
  }
  if (sweep_parameter != "alpha" && sweep_parameter != "beta") {
    throw ConfigError("sweep.parameter must be alpha|beta");
  }
  if (sweep_grid.empty()) throw ConfigError("sweep.grid must be non-empty");
  if (seeds.empty()) throw ConfigError("run.seeds must be non-empty");
  if (threads < 0) throw ConfigError("run.threads must be >= 0");
  if (out_dir.empty()) throw ConfigError("run.out must be non-empty");
}

json ExperimentConfig::to_json() const {
  json j;
  j["dataset"] = {{"n_entities", n_entities},
                  {"n_attributes", n_attributes},
                  {"forget_ratio", forget_ratio},
                  {"views_per_entity", views_per_entity},
                  {"noise_sigma", noise_sigma},
                  {"n_realworld", n_realworld},
                  {"answer_vocab", answer_vocab},
                  {"image_dim", image_dim}};
  j["model"] = {{"h1", h1}, {"h2", h2}, {"d_model", d_model}, {"fusion_width", fusion_width}};
  j["train"] = {{"epochs", train_epochs}, {"lr", train_lr}, {"batch_size", train_batch}};
  j["unlearn"] = {{"method", method},
                  {"alpha", alpha},
                  {"beta", beta},
                  {"d_fisher", d_fisher},
                  {"prune_ratio", prune_ratio ? json(*prune_ratio) : json(nullptr)},
                  {"d_importance", d_importance ? json(*d_importance) : json(nullptr)},
                  {"lr", unlearn_lr},
                  {"epochs", unlearn_epochs},
                  {"forget_target", forget_target},
                  {"batch_size", unlearn_batch},
                  {"retain_batch_size", retain_batch},
                  {"scope", scope},
                  {"strategy", strategy},
                  {"eps", eps},
                  {"mask_gate", mask_gate},
                  {"qa_probe", qa_probe},
                  {"prune_all_layers", prune_all_layers},
                  {"npo_beta", npo_beta}};
  j["attack"] = {{"fractions", attack_fractions},
                 {"epochs", attack_epochs},
                 {"lr", attack_lr},
                 {"batch_size", attack_batch},
                 {"scope", attack_scope}};
  j["sweep"] = {{"parameter", sweep_parameter}, {"grid", sweep_grid}};
  j["run"] = {{"seeds", seeds}, {"out", out_dir}, {"threads", threads}};
  return j;
}

GenParams ExperimentConfig::gen_params(std::uint64_t seed) const {
  GenParams p;
  p.seed = seed;
  p.n_entities = n_entities;
  p.n_attributes = n_attributes;
  p.forget_ratio = forget_ratio;
  p.views_per_entity = views_per_entity;
  p.noise_sigma = noise_sigma;
  p.n_realworld = n_realworld;
  p.answer_vocab = answer_vocab;
  p.image_dim = image_dim;
  return p;
}

ModelDims ExperimentConfig::model_dims() const {
  ModelDims d;
  d.image_dim = image_dim;
  d.h1 = h1;
  d.h2 = h2;
  d.d_model = d_model;
  d.fusion_width = fusion_width;
  d.answer_vocab = answer_vocab;
  d.n_names = n_entities + n_realworld;
  d.n_attrs = n_attributes;
  return d;
}

UnlearnConfig ExperimentConfig::unlearn_config() const {
  UnlearnConfig u;
  u.alpha = alpha;
  u.beta = beta;
  u.d_fisher = d_fisher;
  u.prune_ratio = prune_ratio;
  u.d_importance = d_importance;
  u.lr = unlearn_lr;
  u.epochs = unlearn_epochs;
  u.forget_target = forget_target;
  u.batch_size = unlearn_batch;
  u.retain_batch_size = retain_batch;
  u.scope = ComponentSet::vision_side();
  if (strategy == "prune_then_finetune") u.strategy = Strategy::PruneThenFinetune;
  else if (strategy == "finetune_then_prune") u.strategy = Strategy::FinetuneThenPrune;
  else if (strategy == "mask_union") u.strategy = Strategy::MaskUnion;
  else if (strategy == "mask_intersection") u.strategy = Strategy::MaskIntersection;
  else if (strategy == "prune_only") u.strategy = Strategy::PruneOnly;
  else if (strategy == "finetune_only") u.strategy = Strategy::FinetuneOnly;
  else throw ConfigError("unknown strategy '" + strategy + "'");
  u.eps = eps;
  if (mask_gate == "entire_update") u.mask_gate = MaskGate::EntireUpdate;
  else if (mask_gate == "forget_term") u.mask_gate = MaskGate::ForgetTermOnly;
  else throw ConfigError("unknown mask_gate '" + mask_gate + "'");
  if (qa_probe == "signature") u.qa_probe = QaProbe::Signature;
  else if (qa_probe == "drop") u.qa_probe = QaProbe::Drop;
  else throw ConfigError("unknown qa_probe '" + qa_probe + "'");
  u.prune_all_layers = prune_all_layers;
  return u;
}

BaselineHyper ExperimentConfig::baseline_hyper() const {
  BaselineHyper h;
  h.lr = unlearn_lr;
  h.epochs = unlearn_epochs;
  h.forget_target = forget_target;
  h.batch_size = unlearn_batch;
  h.retain_batch_size = retain_batch;
  h.npo_beta = npo_beta;
  h.prune_ratio = prune_ratio;
  h.d_importance = d_importance;
  h.prune_all_layers = prune_all_layers;
  h.eps = eps;
  return h;
}

ComponentSet ExperimentConfig::unlearn_scope() const {
  return scope == "full" ? ComponentSet::all() : ComponentSet::vision_side();
}

ComponentSet ExperimentConfig::resolved_attack_scope() const {
  if (attack_scope == "full") return ComponentSet::all();
  return unlearn_scope();
}

BaselineMethod parse_baseline(const std::string& name) {
  if (name == "ga") return BaselineMethod::Ga;
  if (name == "ga_diff") return BaselineMethod::GaDiff;
  if (name == "kl_min") return BaselineMethod::KlMin;
  if (name == "npo") return BaselineMethod::Npo;
  if (name == "prune_only") return BaselineMethod::PruneOnly;
  throw ConfigError("'" + name + "' is not a baseline method");
}

}  // namespace vkdlab::cli
