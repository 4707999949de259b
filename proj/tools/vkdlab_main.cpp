// vkdlab: config-driven experiment runner for the unlearning laboratory.
//
//   vkdlab gen     --config cfg.toml            synthesize the benchmark
//   vkdlab train   --config cfg.toml            fit the vanilla model
//   vkdlab unlearn --config cfg.toml            run the configured method
//   vkdlab eval    --config cfg.toml            per-split accuracy reports
//   vkdlab attack  --config cfg.toml            relearning-attack curves
//   vkdlab sweep   --config cfg.toml            alpha/beta grid, long CSV
//   vkdlab report  --config cfg.toml            aggregate table across seeds
//
// Exit codes: 0 ok, 2 config error, 3 I/O error, 4 numeric failure.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "cli/commands.hpp"
#include "vkdlab/parallel.hpp"

int main(int argc, char** argv) {
  CLI::App app{"desk-scale multimodal unlearning laboratory"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand

  std::string config_path;
  std::string out_dir;
  std::int64_t seed_override = -1;

  app.add_option("--config", config_path, "TOML config file")->type_name("PATH");
  app.add_option("--seed", seed_override, "override [run] seeds with a single seed")
      ->type_name("N");
  app.add_option("--out", out_dir, "override output directory")->type_name("DIR");

  const char* names[] = {"gen", "train", "unlearn", "eval", "attack", "sweep", "report"};
  const char* descs[] = {"generate the synthetic dataset",
                         "train the vanilla model",
                         "run the configured unlearning method",
                         "evaluate checkpoints into reports",
                         "run relearning attacks",
                         "run an alpha/beta sweep",
                         "aggregate reports into a method table"};
  for (int i = 0; i < 7; ++i) app.add_subcommand(names[i], descs[i]);

  CLI11_PARSE(app, argc, argv);

  try {
    vkdlab::cli::ExperimentConfig cfg =
        config_path.empty() ? vkdlab::cli::ExperimentConfig{}
                            : vkdlab::cli::ExperimentConfig::from_file(config_path);
    if (seed_override >= 0) cfg.seeds = {static_cast<std::uint64_t>(seed_override)};
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    cfg.validate();
    if (cfg.threads > 0) vkdlab::par::set_threads(cfg.threads);

    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "gen") vkdlab::cli::cmd_gen(cfg);
    else if (cmd == "train") vkdlab::cli::cmd_train(cfg);
    else if (cmd == "unlearn") vkdlab::cli::cmd_unlearn(cfg);
    else if (cmd == "eval") vkdlab::cli::cmd_eval(cfg);
    else if (cmd == "attack") vkdlab::cli::cmd_attack(cfg);
    else if (cmd == "sweep") vkdlab::cli::cmd_sweep(cfg);
    else if (cmd == "report") vkdlab::cli::cmd_report(cfg);
    return 0;
  } catch (const vkdlab::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const vkdlab::ShapeError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const vkdlab::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  } catch (const vkdlab::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
