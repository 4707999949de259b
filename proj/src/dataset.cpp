#include "vkdlab/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "vkdlab/jsonio.hpp"

namespace vkdlab {

using nlohmann::json;

const Vec& SplitDatasets::signature_of(int name_id) const {
  if (name_id < 0 || static_cast<std::size_t>(name_id) >= entities.size()) {
    throw ShapeError("unknown entity id " + std::to_string(name_id));
  }
  return entities[static_cast<std::size_t>(name_id)].signature;
}

namespace {

double distance(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

// Rejection-sampled signature, pairwise distance >= 4 * sigma * sqrt(dim)
// against everything drawn so far (classifiability guarantee).
Vec draw_signature(Rng& rng, int dim, double min_dist,
                   const std::vector<Entity>& existing, int max_rejects) {
  for (int attempt = 0; attempt < max_rejects; ++attempt) {
    Vec sig(static_cast<std::size_t>(dim));
    for (double& v : sig) v = rng.normal();
    bool ok = true;
    for (const Entity& e : existing) {
      if (distance(sig, e.signature) < min_dist) {
        ok = false;
        break;
      }
    }
    if (ok) return sig;
  }
  throw ConfigError("signature separation infeasible after rejection budget");
}

void append_entity_samples(const SplitDatasets& data, const Entity& e,
                           const GenParams& p, Rng& rng,
                           std::vector<Sample>& vqa, std::vector<Sample>& qa) {
  (void)data;
  for (int view = 0; view < p.views_per_entity; ++view) {
    Vec image = e.signature;
    for (double& v : image) v += p.noise_sigma * rng.normal();
    for (const auto& [attr, answer] : e.attributes) {
      vqa.push_back(Sample{TaskKind::Vqa, e.name_id, image, attr, answer});
    }
  }
  for (const auto& [attr, answer] : e.attributes) {
    qa.push_back(Sample{TaskKind::Qa, e.name_id, std::nullopt, attr, answer});
  }
}

}  // namespace

SplitDatasets generate(const GenParams& p) {
  if (!(p.forget_ratio > 0.0 && p.forget_ratio < 1.0)) {
    throw ConfigError("forget_ratio must be in (0, 1)");
  }
  if (p.noise_sigma < 0.0) throw ConfigError("noise_sigma must be >= 0");
  if (p.n_entities <= 0 || p.n_attributes <= 0 || p.views_per_entity <= 0 ||
      p.n_realworld < 0 || p.answer_vocab <= 0 || p.image_dim <= 0) {
    throw ConfigError("dataset sizes must be positive");
  }

  const double min_dist =
      4.0 * p.noise_sigma * std::sqrt(static_cast<double>(p.image_dim));

  Rng rng(p.seed);
  Rng rw_rng = rng.split();  // independent stream for the real-world pool

  SplitDatasets data;
  const int n_forget =
      static_cast<int>(std::ceil(p.forget_ratio * static_cast<double>(p.n_entities)));
  data.n_forget_entities = n_forget;
  data.n_retain_entities = p.n_entities - n_forget;
  data.n_realworld_entities = p.n_realworld;

  auto make_entity = [&](int id, Rng& r) {
    Entity e;
    e.name_id = id;
    e.signature = draw_signature(r, p.image_dim, min_dist, data.entities, p.max_rejects);
    for (int a = 0; a < p.n_attributes; ++a) {
      e.attributes.emplace_back(a, r.uniform_int(p.answer_vocab));
    }
    data.entities.push_back(std::move(e));
  };

  for (int id = 0; id < p.n_entities; ++id) make_entity(id, rng);
  for (int id = 0; id < p.n_realworld; ++id) make_entity(p.n_entities + id, rw_rng);

  for (int id = 0; id < p.n_entities; ++id) {
    const bool forget = id < n_forget;
    append_entity_samples(data, data.entities[static_cast<std::size_t>(id)], p, rng,
                          forget ? data.forget_vqa : data.retain_vqa,
                          forget ? data.forget_qa : data.retain_qa);
  }
  for (int id = p.n_entities; id < p.n_entities + p.n_realworld; ++id) {
    append_entity_samples(data, data.entities[static_cast<std::size_t>(id)], p, rw_rng,
                          data.realworld_vqa, data.realworld_qa);
  }
  return data;
}

namespace {

void append_sample_line(std::string& out, const char* split, const Sample& s) {
  out += "{\"split\":\"";
  out += split;
  out += "\",\"kind\":\"";
  out += s.kind == TaskKind::Vqa ? "vqa" : "qa";
  out += "\",\"entity\":";
  out += std::to_string(s.entity);
  out += ",\"attr\":";
  out += std::to_string(s.attr);
  out += ",\"answer\":";
  out += std::to_string(s.answer);
  out += ",\"image\":";
  if (s.image) {
    append_array(out, *s.image);
  } else {
    out += "null";
  }
  out += "}\n";
}

Sample parse_sample(const json& j) {
  Sample s;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "vqa") {
    s.kind = TaskKind::Vqa;
  } else if (kind == "qa") {
    s.kind = TaskKind::Qa;
  } else {
    throw IoError("unknown kind '" + kind + "'");
  }
  s.entity = j.at("entity").get<int>();
  s.attr = j.at("attr").get<int>();
  s.answer = j.at("answer").get<int>();
  const json& img = j.at("image");
  if (!img.is_null()) s.image = img.get<Vec>();
  if (s.kind == TaskKind::Vqa && !s.image) throw IoError("vqa sample without image");
  if (s.kind == TaskKind::Qa && s.image) throw IoError("qa sample with image");
  return s;
}

}  // namespace

void save(const SplitDatasets& data, const std::string& path, const nlohmann::json& meta) {
  std::string out;
  if (!meta.is_null()) {
    json header{{"split", "meta"}, {"meta", meta}};
    out += header.dump();
    out += '\n';
  }
  for (const Entity& e : data.entities) {
    out += "{\"split\":\"entity\",\"entity\":";
    out += std::to_string(e.name_id);
    out += ",\"pool\":\"";
    out += e.name_id < data.n_forget_entities ? "forget"
          : e.name_id < data.n_forget_entities + data.n_retain_entities ? "retain"
                                                                        : "realworld";
    out += "\",\"signature\":";
    append_array(out, e.signature);
    out += ",\"attrs\":[";
    for (std::size_t i = 0; i < e.attributes.size(); ++i) {
      if (i) out += ',';
      out += '[' + std::to_string(e.attributes[i].first) + ',' +
             std::to_string(e.attributes[i].second) + ']';
    }
    out += "]}\n";
  }
  auto dump_split = [&](const char* tag, const std::vector<Sample>& split) {
    for (const Sample& s : split) append_sample_line(out, tag, s);
  };
  dump_split("forget", data.forget_vqa);
  dump_split("forget", data.forget_qa);
  dump_split("retain", data.retain_vqa);
  dump_split("retain", data.retain_qa);
  dump_split("realworld", data.realworld_vqa);
  dump_split("realworld", data.realworld_qa);
  atomic_write(path, out);
}

SplitDatasets load(const std::string& path) {
  const std::string text = read_file(path);
  SplitDatasets data;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw IoError("line " + std::to_string(line_no) + ": " + e.what());
    }
    try {
      const std::string split = j.at("split").get<std::string>();
      if (split == "meta") {
        continue;  // run-config echo, not part of the dataset proper
      }
      if (split == "entity") {
        Entity e;
        e.name_id = j.at("entity").get<int>();
        e.signature = j.at("signature").get<Vec>();
        for (const auto& pair : j.at("attrs")) {
          e.attributes.emplace_back(pair.at(0).get<int>(), pair.at(1).get<int>());
        }
        const std::string pool = j.at("pool").get<std::string>();
        if (pool == "forget") ++data.n_forget_entities;
        else if (pool == "retain") ++data.n_retain_entities;
        else if (pool == "realworld") ++data.n_realworld_entities;
        else throw IoError("unknown pool '" + pool + "'");
        if (e.name_id != static_cast<int>(data.entities.size())) {
          throw IoError("entity ids out of order");
        }
        data.entities.push_back(std::move(e));
      } else if (split == "forget" || split == "retain" || split == "realworld") {
        Sample s = parse_sample(j);
        auto& vqa = split == "forget" ? data.forget_vqa
                    : split == "retain" ? data.retain_vqa : data.realworld_vqa;
        auto& qa = split == "forget" ? data.forget_qa
                   : split == "retain" ? data.retain_qa : data.realworld_qa;
        (s.kind == TaskKind::Vqa ? vqa : qa).push_back(std::move(s));
      } else {
        throw IoError("unknown split '" + split + "'");
      }
    } catch (const json::exception& e) {
      throw IoError("line " + std::to_string(line_no) + ": " + e.what());
    } catch (const IoError& e) {
      throw IoError("line " + std::to_string(line_no) + ": " + std::string(e.what()));
    }
  }
  return data;
}

std::vector<Sample> subsample(std::span<const Sample> split, double fraction, Rng& rng) {
  if (split.empty()) throw ConfigError("subsample: empty input");
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ConfigError("subsample: fraction must be in (0, 1]");
  }
  std::vector<std::size_t> idx(split.size());
  std::iota(idx.begin(), idx.end(), 0);
  rng.shuffle(idx);
  const std::size_t take = static_cast<std::size_t>(
      std::ceil(fraction * static_cast<double>(split.size())));
  std::vector<Sample> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) out.push_back(split[idx[i]]);
  return out;
}

}  // namespace vkdlab
