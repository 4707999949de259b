// Pipeline commands behind the CLI subcommands. Each command is idempotent:
// identical config + seed produces byte-identical output files. Wall-clock
// timings go to a side log (out/timing.log), never into the reports.

#pragma once

#include <cstdint>
#include <string>

#include "cli/config.hpp"

namespace vkdlab::cli {

struct RunPaths {
  std::string root;

  std::string seed_dir(std::uint64_t seed) const;
  std::string dataset(std::uint64_t seed) const;
  std::string vanilla(std::uint64_t seed) const;
  std::string unlearned(std::uint64_t seed, const std::string& method) const;
  std::string audit(std::uint64_t seed, const std::string& method) const;
  std::string report_json(std::uint64_t seed, const std::string& label) const;
  std::string report_csv(std::uint64_t seed, const std::string& label) const;
  std::string attack_csv(const std::string& method) const;
  std::string attack_json(const std::string& method) const;
  std::string sweep_csv(const std::string& parameter) const;
  std::string table_csv() const;
  std::string timing_log() const;
};

// Deterministic per-stage seed derivation.
std::uint64_t substream(std::uint64_t seed, std::uint64_t tag);

void cmd_gen(const ExperimentConfig& cfg);
void cmd_train(const ExperimentConfig& cfg);
void cmd_unlearn(const ExperimentConfig& cfg);
void cmd_eval(const ExperimentConfig& cfg);
void cmd_attack(const ExperimentConfig& cfg);
void cmd_sweep(const ExperimentConfig& cfg);
void cmd_report(const ExperimentConfig& cfg);

}  // namespace vkdlab::cli
