#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "cli/commands.hpp"
#include "vkdlab/eval.hpp"
#include "vkdlab/jsonio.hpp"

using namespace vkdlab;
using vkdlab::cli::ExperimentConfig;

namespace {

namespace fs = std::filesystem;

std::string write_temp(const char* name, const std::string& text) {
  const std::string path = (fs::temp_directory_path() / name).string();
  atomic_write(path, text);
  return path;
}

// A config small enough for pipeline smoke tests.
std::string tiny_config_text(const std::string& out_dir) {
  return "# tiny smoke config\n"
         "[dataset]\n"
         "n_entities = 6\n"
         "n_attributes = 2\n"
         "forget_ratio = 0.2\n"
         "views_per_entity = 2\n"
         "noise_sigma = 0.1\n"
         "n_realworld = 2\n"
         "answer_vocab = 4\n"
         "image_dim = 8\n"
         "[model]\n"
         "h1 = 12\n"
         "h2 = 10\n"
         "d_model = 8\n"
         "fusion_width = 12\n"
         "[train]\n"
         "epochs = 25\n"
         "lr = 0.08\n"
         "batch_size = 16\n"
         "[unlearn]\n"
         "method = \"vkd\"\n"
         "epochs = 10\n"
         "batch_size = 16\n"
         "retain_batch_size = 64\n"
         "[attack]\n"
         "fractions = [0.2]\n"
         "epochs = 2\n"
         "batch_size = 8\n"
         "[run]\n"
         "seeds = [0]\n"
         "out = \"" +
         out_dir + "\"\n";
}

}  // namespace

TEST_CASE("config parsing accepts the documented grammar") {
  const std::string path = write_temp("vkdlab_cfg_ok.toml",
                                      "[dataset]\n"
                                      "n_entities = 12  # comment\n"
                                      "noise_sigma = 0.2\n"
                                      "\n"
                                      "[unlearn]\n"
                                      "method = \"ga\"\n"
                                      "scope = \"full\"\n"
                                      "[attack]\n"
                                      "fractions = [0.1, 0.3]\n"
                                      "[run]\n"
                                      "seeds = [3, 4]\n");
  ExperimentConfig cfg = ExperimentConfig::from_file(path);
  CHECK(cfg.n_entities == 12);
  CHECK(cfg.noise_sigma == 0.2);
  CHECK(cfg.method == "ga");
  CHECK(cfg.scope == "full");
  CHECK(cfg.attack_fractions == std::vector<double>{0.1, 0.3});
  CHECK(cfg.seeds == std::vector<std::uint64_t>{3, 4});
  CHECK(cfg.n_attributes == 4);  // untouched default
  fs::remove(path);
}

TEST_CASE("config parsing rejects unknown keys and sections") {
  const std::string bad_key =
      write_temp("vkdlab_cfg_badkey.toml", "[dataset]\nn_entitties = 5\n");
  CHECK_THROWS_AS(ExperimentConfig::from_file(bad_key), ConfigError);
  fs::remove(bad_key);

  const std::string bad_section = write_temp("vkdlab_cfg_badsec.toml", "[dataets]\n");
  CHECK_THROWS_AS(ExperimentConfig::from_file(bad_section), ConfigError);
  fs::remove(bad_section);

  const std::string bad_type =
      write_temp("vkdlab_cfg_badtype.toml", "[dataset]\nn_entities = \"many\"\n");
  CHECK_THROWS_AS(ExperimentConfig::from_file(bad_type), ConfigError);
  fs::remove(bad_type);

  const std::string dup = write_temp("vkdlab_cfg_dup.toml", "[run]\nout = \"a\"\nout = \"b\"\n");
  CHECK_THROWS_AS(ExperimentConfig::from_file(dup), ConfigError);
  fs::remove(dup);
}

TEST_CASE("invalid ratio fails before any output exists") {
  const std::string out = (fs::temp_directory_path() / "vkdlab_never_created").string();
  const std::string path = write_temp("vkdlab_cfg_ratio.toml",
                                      "[dataset]\nforget_ratio = 1.5\n[run]\nout = \"" +
                                          out + "\"\n");
  CHECK_THROWS_AS(ExperimentConfig::from_file(path), ConfigError);
  CHECK(!fs::exists(out));
  fs::remove(path);
}

TEST_CASE("method vkd requires vision scope") {
  const std::string path = write_temp("vkdlab_cfg_scope.toml",
                                      "[unlearn]\nmethod = \"vkd\"\nscope = \"full\"\n");
  CHECK_THROWS_AS(ExperimentConfig::from_file(path), ConfigError);
  fs::remove(path);
}

TEST_CASE("config echo serializes every section") {
  ExperimentConfig cfg;
  auto j = cfg.to_json();
  for (const char* section : {"dataset", "model", "train", "unlearn", "attack", "sweep", "run"}) {
    CHECK(j.contains(section));
  }
  CHECK(j["unlearn"]["alpha"] == 1.25);
  CHECK(j["unlearn"]["beta"] == 0.3);
  CHECK(j["unlearn"]["d_fisher"] == 1.0);
  CHECK(j["unlearn"]["prune_ratio"] == 0.02);
}

TEST_CASE("pipeline commands compose and are idempotent") {
  const std::string out = (fs::temp_directory_path() / "vkdlab_cli_smoke").string();
  fs::remove_all(out);
  const std::string cfg_path = write_temp("vkdlab_cfg_smoke.toml", tiny_config_text(out));
  ExperimentConfig cfg = ExperimentConfig::from_file(cfg_path);

  cli::cmd_gen(cfg);
  cli::RunPaths paths{cfg.out_dir};
  REQUIRE(fs::exists(paths.dataset(0)));
  SplitDatasets data = load(paths.dataset(0));
  CHECK(data.entities.size() == 8);  // 6 fictitious + 2 real-world
  CHECK(data.n_forget_entities == 2);  // ceil(0.2 * 6)

  const std::string dataset_bytes = read_file(paths.dataset(0));
  cli::cmd_gen(cfg);  // regenerating produces identical bytes
  CHECK(read_file(paths.dataset(0)) == dataset_bytes);

  cli::cmd_train(cfg);
  REQUIRE(fs::exists(paths.vanilla(0)));
  REQUIRE(fs::exists(paths.report_json(0, "vanilla")));

  cli::cmd_unlearn(cfg);
  REQUIRE(fs::exists(paths.unlearned(0, "vkd")));
  REQUIRE(fs::exists(paths.audit(0, "vkd")));
  // Audit echoes the prune count: ceil(0.02 * h2) = 1 for h2 = 10.
  auto audit = nlohmann::json::parse(read_file(paths.audit(0, "vkd")));
  CHECK(audit["prune_count"] == 1);
  CHECK(audit["config"]["seed"] == 0);

  cli::cmd_eval(cfg);
  REQUIRE(fs::exists(paths.report_json(0, "vkd")));
  const std::string report_bytes = read_file(paths.report_json(0, "vkd"));
  cli::cmd_eval(cfg);
  CHECK(read_file(paths.report_json(0, "vkd")) == report_bytes);

  cli::cmd_attack(cfg);
  REQUIRE(fs::exists(paths.attack_csv("vkd")));
  {
    std::ifstream in(paths.attack_csv("vkd"));
    std::string line;
    int rows = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
      if (line.rfind("# config:", 0) == 0) continue;
      if (!header_seen) {
        CHECK(line == AttackCurve::csv_header(cfg.attack_epochs));
        header_seen = true;
        continue;
      }
      ++rows;
      // AG column equals final minus pre for every row.
      std::vector<std::string> fields;
      std::size_t pos = 0;
      while (pos != std::string::npos) {
        std::size_t next = line.find(',', pos);
        fields.push_back(line.substr(pos, next - pos));
        pos = next == std::string::npos ? next : next + 1;
      }
      REQUIRE(fields.size() == 4u + 2u + 1u);  // label,fraction,seed,pre + epochs + ag
      const double pre = std::stod(fields[3]);
      const double last = std::stod(fields[fields.size() - 2]);
      const double ag = std::stod(fields.back());
      CHECK(ag == doctest::Approx(last - pre).epsilon(1e-9));
    }
    CHECK(rows == 1);  // one row per (method, fraction, seed)
  }

  cli::cmd_report(cfg);
  REQUIRE(fs::exists(paths.table_csv()));
  {
    std::ifstream in(paths.table_csv());
    std::string line;
    std::getline(in, line);  // config comment
    CHECK(line.rfind("# config:", 0) == 0);
    std::getline(in, line);
    CHECK(line.rfind("method,", 0) == 0);
    std::getline(in, line);
    CHECK(line.rfind("vanilla,", 0) == 0);
    std::getline(in, line);
    CHECK(line.rfind("vkd,", 0) == 0);
  }

  fs::remove(cfg_path);
  fs::remove_all(out);
}

TEST_CASE("missing inputs surface as io errors") {
  const std::string out = (fs::temp_directory_path() / "vkdlab_cli_missing").string();
  fs::remove_all(out);
  ExperimentConfig cfg;
  cfg.out_dir = out;
  CHECK_THROWS_AS(cli::cmd_train(cfg), IoError);   // no dataset yet
  CHECK_THROWS_AS(cli::cmd_unlearn(cfg), IoError);
  CHECK_THROWS_AS(cli::cmd_attack(cfg), IoError);
  fs::remove_all(out);
}

TEST_CASE("sweep produces one row per grid value and seed") {
  const std::string out = (fs::temp_directory_path() / "vkdlab_cli_sweep").string();
  fs::remove_all(out);
  const std::string cfg_path = write_temp("vkdlab_cfg_sweep.toml", tiny_config_text(out));
  ExperimentConfig cfg = ExperimentConfig::from_file(cfg_path);
  cfg.sweep_parameter = "beta";
  cfg.sweep_grid = {0.0, 0.3};
  cfg.seeds = {0, 1};
  cfg.train_epochs = 10;  // sweep trains in-memory; keep it quick

  cli::cmd_sweep(cfg);
  cli::RunPaths paths{cfg.out_dir};
  std::ifstream in(paths.sweep_csv("beta"));
  std::string line;
  int rows = 0;
  while (std::getline(in, line)) {
    if (line.rfind("# config:", 0) == 0 || line.rfind("parameter,", 0) == 0) continue;
    CHECK(line.rfind("beta,", 0) == 0);
    ++rows;
  }
  CHECK(rows == 4);  // 2 grid values x 2 seeds
  fs::remove(cfg_path);
  fs::remove_all(out);
}
