#include "cli/commands.hpp"

#include <array>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include "vkdlab/eval.hpp"
#include "vkdlab/jsonio.hpp"
#include "vkdlab/parallel.hpp"

namespace vkdlab::cli {

namespace fs = std::filesystem;
using nlohmann::json;

std::uint64_t substream(std::uint64_t seed, std::uint64_t tag) {
  Rng r(seed ^ (tag * 0x9e3779b97f4a7c15ull));
  return r.next_u64();
}

namespace {
constexpr std::uint64_t kInitTag = 1, kTrainTag = 2, kUnlearnTag = 3, kAttackTag = 4;
}

std::string RunPaths::seed_dir(std::uint64_t seed) const {
  return root + "/seed" + std::to_string(seed);
}
std::string RunPaths::dataset(std::uint64_t seed) const {
  return seed_dir(seed) + "/dataset.jsonl";
}
std::string RunPaths::vanilla(std::uint64_t seed) const {
  return seed_dir(seed) + "/vanilla.json";
}
std::string RunPaths::unlearned(std::uint64_t seed, const std::string& method) const {
  return seed_dir(seed) + "/unlearned_" + method + ".json";
}
std::string RunPaths::audit(std::uint64_t seed, const std::string& method) const {
  return seed_dir(seed) + "/audit_" + method + ".json";
}
std::string RunPaths::report_json(std::uint64_t seed, const std::string& label) const {
  return seed_dir(seed) + "/report_" + label + ".json";
}
std::string RunPaths::report_csv(std::uint64_t seed, const std::string& label) const {
  return seed_dir(seed) + "/report_" + label + ".csv";
}
std::string RunPaths::attack_csv(const std::string& method) const {
  return root + "/attack_" + method + ".csv";
}
std::string RunPaths::attack_json(const std::string& method) const {
  return root + "/attack_" + method + ".json";
}
std::string RunPaths::sweep_csv(const std::string& parameter) const {
  return root + "/sweep_" + parameter + ".csv";
}
std::string RunPaths::table_csv() const { return root + "/table1.csv"; }
std::string RunPaths::timing_log() const { return root + "/timing.log"; }

namespace {

class Timer {
 public:
  Timer() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

void log_timing(const RunPaths& paths, const std::string& what, double seconds) {
  std::ofstream log(paths.timing_log(), std::ios::app);
  char buf[64];
  std::snprintf(buf, sizeof(buf), " wall=%.3fs", seconds);
  log << what << buf << "\n";
}

json config_echo(const ExperimentConfig& cfg, std::uint64_t seed) {
  return json{{"seed", seed}, {"experiment", cfg.to_json()}};
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

void require_file(const std::string& path, const char* hint) {
  if (!fs::exists(path)) {
    throw IoError("missing " + path + " (" + hint + ")");
  }
}

// "# config: {...}" comment line so every CSV carries its resolved config.
std::string csv_preamble(const ExperimentConfig& cfg) {
  return "# config: " + cfg.to_json().dump() + "\n";
}

void write_report_files(const RunPaths& paths, const ExperimentConfig& cfg,
                        std::uint64_t seed, const std::string& label,
                        const RunReport& report) {
  json j = report.to_json();
  atomic_write(paths.report_json(seed, label), j.dump(2) + "\n");
  std::string csv = csv_preamble(cfg);
  csv += RunReport::csv_header() + "\n";
  csv += report.to_csv_row(label, seed) + "\n";
  atomic_write(paths.report_csv(seed, label), csv);
}

SplitDatasets load_dataset(const RunPaths& paths, std::uint64_t seed) {
  require_file(paths.dataset(seed), "run `gen` first");
  return load(paths.dataset(seed));
}

ToyMllm load_vanilla(const RunPaths& paths, std::uint64_t seed) {
  require_file(paths.vanilla(seed), "run `train` first");
  return ToyMllm::load_checkpoint(paths.vanilla(seed));
}

UnlearnResult run_unlearn_method(const ExperimentConfig& cfg, const ToyMllm& vanilla,
                                 const SplitDatasets& data, std::uint64_t seed) {
  Rng rng(substream(seed, kUnlearnTag));
  if (cfg.method == "vkd") {
    return unlearn_vkd(vanilla, data, cfg.unlearn_config(), rng);
  }
  return unlearn_baseline(vanilla, data, parse_baseline(cfg.method), cfg.unlearn_scope(),
                          cfg.baseline_hyper(), rng);
}

}  // namespace

void cmd_gen(const ExperimentConfig& cfg) {
  cfg.validate();
  RunPaths paths{cfg.out_dir};
  for (std::uint64_t seed : cfg.seeds) {
    Timer timer;
    SplitDatasets data = generate(cfg.gen_params(seed));
    ensure_dir(paths.seed_dir(seed));
    save(data, paths.dataset(seed), config_echo(cfg, seed));
    log_timing(paths, "gen seed=" + std::to_string(seed), timer.seconds());
    std::cout << "gen seed=" << seed << " -> " << paths.dataset(seed) << "\n";
  }
}

void cmd_train(const ExperimentConfig& cfg) {
  cfg.validate();
  RunPaths paths{cfg.out_dir};
  for (std::uint64_t seed : cfg.seeds) {
    Timer timer;
    SplitDatasets data = load_dataset(paths, seed);
    Rng init_rng(substream(seed, kInitTag));
    ToyMllm base = ToyMllm::init(cfg.model_dims(), init_rng);
    Rng train_rng(substream(seed, kTrainTag));
    TrainResult trained =
        train_vanilla(base, data, cfg.train_epochs, cfg.train_lr, cfg.train_batch, train_rng);
    trained.model.set_origin_seed(seed);
    trained.model.save_checkpoint(paths.vanilla(seed), config_echo(cfg, seed));
    RunReport report = evaluate(trained.model, data);
    report.config_echo = config_echo(cfg, seed);
    write_report_files(paths, cfg, seed, "vanilla", report);
    log_timing(paths, "train seed=" + std::to_string(seed), timer.seconds());
    std::cout << "train seed=" << seed << " -> " << paths.vanilla(seed) << "\n";
  }
}

void cmd_unlearn(const ExperimentConfig& cfg) {
  cfg.validate();
  RunPaths paths{cfg.out_dir};
  for (std::uint64_t seed : cfg.seeds) {
    Timer timer;
    SplitDatasets data = load_dataset(paths, seed);
    ToyMllm vanilla = load_vanilla(paths, seed);
    UnlearnResult result = run_unlearn_method(cfg, vanilla, data, seed);
    result.model.set_origin_seed(seed);
    result.model.save_checkpoint(paths.unlearned(seed, cfg.method), config_echo(cfg, seed));
    json audit = result.audit.to_json();
    audit["config"] = config_echo(cfg, seed);
    atomic_write(paths.audit(seed, cfg.method), audit.dump(2) + "\n");
    log_timing(paths, "unlearn method=" + cfg.method + " seed=" + std::to_string(seed),
               timer.seconds());
    std::cout << "unlearn method=" << cfg.method << " seed=" << seed << " -> "
              << paths.unlearned(seed, cfg.method) << "\n";
  }
}

void cmd_eval(const ExperimentConfig& cfg) {
  cfg.validate();
  RunPaths paths{cfg.out_dir};
  for (std::uint64_t seed : cfg.seeds) {
    Timer timer;
    SplitDatasets data = load_dataset(paths, seed);
    ToyMllm vanilla = load_vanilla(paths, seed);
    RunReport vanilla_report = evaluate(vanilla, data);
    vanilla_report.config_echo = config_echo(cfg, seed);
    write_report_files(paths, cfg, seed, "vanilla", vanilla_report);

    require_file(paths.unlearned(seed, cfg.method), "run `unlearn` first");
    ToyMllm unlearned = ToyMllm::load_checkpoint(paths.unlearned(seed, cfg.method));
    RunReport report = evaluate(unlearned, data);
    report.config_echo = config_echo(cfg, seed);
    write_report_files(paths, cfg, seed, cfg.method, report);
    log_timing(paths, "eval method=" + cfg.method + " seed=" + std::to_string(seed),
               timer.seconds());
    std::cout << "eval method=" << cfg.method << " seed=" << seed << " -> "
              << paths.report_json(seed, cfg.method) << "\n";
  }
}

void cmd_attack(const ExperimentConfig& cfg) {
  cfg.validate();
  RunPaths paths{cfg.out_dir};
  Timer timer;

  std::map<std::uint64_t, ToyMllm> models;
  std::map<std::uint64_t, SplitDatasets> datasets;
  for (std::uint64_t seed : cfg.seeds) {
    datasets.emplace(seed, load_dataset(paths, seed));
    require_file(paths.unlearned(seed, cfg.method), "run `unlearn` first");
    models.emplace(seed, ToyMllm::load_checkpoint(paths.unlearned(seed, cfg.method)));
  }

  const ComponentSet scope = cfg.resolved_attack_scope();
  std::string csv = csv_preamble(cfg);
  csv += AttackCurve::csv_header(cfg.attack_epochs) + "\n";
  json rows = json::array();
  for (std::size_t fi = 0; fi < cfg.attack_fractions.size(); ++fi) {
    const double fraction = cfg.attack_fractions[fi];
    for (std::uint64_t seed : cfg.seeds) {
      Rng rng(substream(seed, kAttackTag + fi));
      AttackCurve curve =
          relearn_attack(models.at(seed), datasets.at(seed).forget_vqa, fraction,
                         cfg.attack_epochs, cfg.attack_lr, scope, cfg.attack_batch, rng);
      csv += curve.to_csv_row(cfg.method, fraction, seed) + "\n";
      json row = curve.to_json();
      row["method"] = cfg.method;
      row["fraction"] = fraction;
      row["seed"] = seed;
      rows.push_back(row);
    }
  }
  json out{{"config", cfg.to_json()}, {"rows", rows}};
  atomic_write(paths.attack_csv(cfg.method), csv);
  atomic_write(paths.attack_json(cfg.method), out.dump(2) + "\n");
  log_timing(paths, "attack method=" + cfg.method, timer.seconds());
  std::cout << "attack method=" << cfg.method << " -> " << paths.attack_csv(cfg.method)
            << "\n";
}

void cmd_sweep(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.sweep_parameter == "alpha") {
    for (double v : cfg.sweep_grid) {
      if (!(v > 0.0)) throw ConfigError("alpha grid values must be > 0");
    }
  } else {
    for (double v : cfg.sweep_grid) {
      if (v < 0.0) throw ConfigError("beta grid values must be >= 0");
    }
  }
  RunPaths paths{cfg.out_dir};
  ensure_dir(paths.root);
  Timer timer;

  std::string csv = csv_preamble(cfg);
  csv += "parameter,value,seed,forget_vqa,forget_qa,retain_vqa,retain_qa,realworld_vqa,"
         "realworld_qa\n";
  for (std::uint64_t seed : cfg.seeds) {
    // Self-contained pipeline per seed; the vanilla model is shared across
    // the grid because it does not depend on the swept parameter.
    SplitDatasets data = generate(cfg.gen_params(seed));
    Rng init_rng(substream(seed, kInitTag));
    ToyMllm base = ToyMllm::init(cfg.model_dims(), init_rng);
    Rng train_rng(substream(seed, kTrainTag));
    ToyMllm vanilla =
        train_vanilla(base, data, cfg.train_epochs, cfg.train_lr, cfg.train_batch, train_rng)
            .model;
    for (double value : cfg.sweep_grid) {
      ExperimentConfig point = cfg;
      if (cfg.sweep_parameter == "alpha") {
        point.alpha = value;
      } else {
        point.beta = value;
      }
      UnlearnResult result = run_unlearn_method(point, vanilla, data, seed);
      RunReport report = evaluate(result.model, data);
      char value_buf[32];
      std::snprintf(value_buf, sizeof(value_buf), "%g", value);
      std::string label = cfg.sweep_parameter + "," + value_buf;
      csv += report.to_csv_row(label, seed) + "\n";
    }
  }
  atomic_write(paths.sweep_csv(cfg.sweep_parameter), csv);
  log_timing(paths, "sweep parameter=" + cfg.sweep_parameter, timer.seconds());
  std::cout << "sweep parameter=" << cfg.sweep_parameter << " -> "
            << paths.sweep_csv(cfg.sweep_parameter) << "\n";
}

void cmd_report(const ExperimentConfig& cfg) {
  cfg.validate();
  RunPaths paths{cfg.out_dir};

  auto read_report = [&](std::uint64_t seed, const std::string& label)
      -> std::optional<std::array<std::optional<double>, 6>> {
    const std::string path = paths.report_json(seed, label);
    if (!fs::exists(path)) return std::nullopt;
    json j;
    try {
      j = json::parse(read_file(path));
    } catch (const json::exception& e) {
      throw IoError(path + ": " + e.what());
    }
    std::array<std::optional<double>, 6> acc;
    static const char* names[6] = {"forget_vqa",    "forget_qa", "retain_vqa",
                                   "retain_qa",     "realworld_vqa", "realworld_qa"};
    for (int i = 0; i < 6; ++i) {
      const json& v = j.at("accuracy").at(names[i]);
      if (!v.is_null()) acc[static_cast<std::size_t>(i)] = v.get<double>();
    }
    return acc;
  };

  // Mean over seeds per label; a label is included only when every seed has
  // a report for it.
  static const char* labels[] = {"vanilla", "vkd", "ga", "ga_diff", "kl_min", "npo",
                                 "prune_only"};
  std::map<std::string, std::array<double, 6>> means;
  std::vector<std::string> present;
  for (const char* label : labels) {
    std::array<double, 6> sum{};
    bool all_present = true;
    for (std::uint64_t seed : cfg.seeds) {
      auto acc = read_report(seed, label);
      if (!acc) {
        all_present = false;
        break;
      }
      for (int i = 0; i < 6; ++i) {
        sum[static_cast<std::size_t>(i)] +=
            (*acc)[static_cast<std::size_t>(i)].value_or(0.0);
      }
    }
    if (!all_present) continue;
    for (double& v : sum) v /= static_cast<double>(cfg.seeds.size());
    means[label] = sum;
    present.push_back(label);
  }
  if (means.find("vanilla") == means.end()) {
    throw IoError("no vanilla reports found; run `train` or `eval` first");
  }

  auto fmt = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return std::string(buf);
  };
  const auto& vanilla = means.at("vanilla");
  std::string csv = csv_preamble(cfg);
  csv += "method,forget_vqa,forget_qa,retain_vqa,retain_qa,realworld_vqa,realworld_qa,"
         "d_forget_vqa,d_forget_qa,d_retain_vqa,d_retain_qa,d_realworld_vqa,d_realworld_qa\n";
  for (const std::string& label : present) {
    const auto& m = means.at(label);
    csv += label;
    for (int i = 0; i < 6; ++i) csv += "," + fmt(m[static_cast<std::size_t>(i)]);
    for (int i = 0; i < 6; ++i) {
      csv += "," + fmt(m[static_cast<std::size_t>(i)] - vanilla[static_cast<std::size_t>(i)]);
    }
    csv += "\n";
  }
  atomic_write(paths.table_csv(), csv);
  std::cout << "report -> " << paths.table_csv() << "\n";
}

}  // namespace vkdlab::cli
