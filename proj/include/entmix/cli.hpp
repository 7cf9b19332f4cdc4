#pragma once
//! Command-line front end for the quench experiment driver.
//!
//! Subcommands:
//!   run      start a quench experiment in a fresh output directory
//!   resume   continue a checkpointed run (t-final may be extended)
//!   oracle   write free-fermion reference curves for a j2 = 0 quench
//!   avg      time-average a column of a recorded CSV over a window
//!
//! Exit codes: 0 success, 1 configuration or input error, 2 numerical abort.

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "entmix/experiment.hpp"

namespace entmix {

namespace detail {

/// Staging area for one subcommand's configuration flags. The mode field
/// goes through a string so config errors surface as exit code 1, and an
/// optional --config manifest provides base values that explicitly typed
/// flags override.
struct ConfigFlags {
  ExperimentConfig cfg;
  std::string mode_str;
  std::string config_file;

  /// Resolves the final configuration: manifest first (if any), then every
  /// option the user actually typed on top.
  ExperimentConfig resolve(const CLI::App* cmd) const {
    ExperimentConfig out = config_file.empty() ? cfg : read_manifest(config_file);
    const std::vector<std::pair<std::string, std::string>> typed = config_entries(cfg);
    for (const auto& [key, value] : typed)
      if (cmd->count("--" + key) > 0) apply_config_entry(out, key, value);
    if (cmd->count("--mode") > 0) apply_config_entry(out, "mode", mode_str);
    return out;
  }
};

/// Binds the full configuration option set onto a subcommand.
inline void add_config_options(CLI::App* cmd, ExperimentConfig& cfg, std::string& mode_str) {
  cmd->add_option("--g", cfg.g, "transverse field after the quench")->capture_default_str();
  cmd->add_option("--j2", cfg.j2, "second-neighbor zz coupling")->capture_default_str();
  cmd->add_option("--block-size", cfg.block_size, "spins per tensor block")
      ->capture_default_str();
  cmd->add_option("--dt", cfg.dt, "Trotter step")->capture_default_str();
  cmd->add_option("--trotter-order", cfg.trotter_order, "Trotter order (only 2)")
      ->capture_default_str();
  cmd->add_option("--d-max", cfg.d_max, "bond dimension cap")->capture_default_str();
  cmd->add_option("--eta-s", cfg.eta_s, "residual-entropy threshold for mixing")
      ->capture_default_str();
  cmd->add_option("--mode", mode_str, "itebd_only, simple, heuristic or oracle")
      ->capture_default_str();
  cmd->add_option("--d-p", cfg.d_p, "fast-dimension cap for the mix controller")
      ->capture_default_str();
  cmd->add_option("--d-purification-max", cfg.d_purification_max,
                  "purifier dimension cap after each mix")
      ->capture_default_str();
  cmd->add_option("--seed", cfg.seed, "random seed (part of the compatibility hash)")
      ->capture_default_str();
  cmd->add_option("--mix-interval", cfg.mix_interval, "time between mix attempts")
      ->capture_default_str();
  cmd->add_option("--sample-stride", cfg.sample_stride, "record every this-many steps")
      ->capture_default_str();
  cmd->add_option("--t-final", cfg.t_final, "evolution time")->capture_default_str();
  cmd->add_option("--checkpoint-interval", cfg.checkpoint_interval, "time between checkpoints")
      ->capture_default_str();
  cmd->add_option("--out", cfg.out_dir, "output directory")->capture_default_str();
}

}  // namespace detail

inline int cli_main(int argc, char** argv) {
  CLI::App app{"quench: local-equilibration experiments that convert entanglement into mixture"};
  app.require_subcommand(1);

  detail::ConfigFlags run_flags;
  run_flags.mode_str = run_mode_name(run_flags.cfg.mode);
  CLI::App* run_cmd = app.add_subcommand("run", "start a quench experiment");
  detail::add_config_options(run_cmd, run_flags.cfg, run_flags.mode_str);
  run_cmd->add_option("--config", run_flags.config_file,
                      "manifest with base values; typed flags override")
      ->check(CLI::ExistingFile);

  std::string resume_from;
  double resume_t_final = 0.0;
  std::map<std::string, std::string> resume_staged;
  CLI::App* resume_cmd = app.add_subcommand("resume", "continue a checkpointed run");
  resume_cmd->add_option("--from", resume_from, "output directory of the run to continue")
      ->required();
  resume_cmd->add_option("--t-final", resume_t_final, "new final time (defaults to stored)");
  for (const std::string& key : compat_keys()) {
    resume_staged[key] = {};
    resume_cmd->add_option("--" + key, resume_staged[key],
                           "must match the checkpointed run");
  }

  detail::ConfigFlags oracle_flags;
  oracle_flags.cfg.mode = RunMode::Oracle;
  oracle_flags.cfg.out_dir = "oracle-out";
  oracle_flags.mode_str = run_mode_name(oracle_flags.cfg.mode);
  int oracle_sites = 800;
  CLI::App* oracle_cmd = app.add_subcommand("oracle", "write free-fermion reference curves");
  detail::add_config_options(oracle_cmd, oracle_flags.cfg, oracle_flags.mode_str);
  oracle_cmd->add_option("--config", oracle_flags.config_file,
                         "manifest with base values; typed flags override")
      ->check(CLI::ExistingFile);
  oracle_cmd->add_option("--sites", oracle_sites, "open-chain length for the reference")
      ->capture_default_str();

  std::string avg_input, avg_column = "sigma_x";
  double avg_from = 0.0, avg_to = 0.0;
  CLI::App* avg_cmd = app.add_subcommand("avg", "time-average a CSV column over a window");
  avg_cmd->add_option("--input", avg_input, "CSV file with a leading t column")->required();
  avg_cmd->add_option("--column", avg_column, "column to average")->capture_default_str();
  avg_cmd->add_option("--from", avg_from, "window start")->required();
  avg_cmd->add_option("--to", avg_to, "window end")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*run_cmd) {
      const ExperimentConfig cfg = run_flags.resolve(run_cmd);
      cfg.validate();
      const RunSummary s = run_experiment(cfg);
      fmt::print("run complete: t = {}, steps = {}, mix events = {}\n", s.final_time,
                 s.steps_done, s.mix_events);
    } else if (*resume_cmd) {
      std::vector<std::pair<std::string, std::string>> overrides;
      for (const auto& [key, value] : resume_staged)
        if (resume_cmd->count("--" + key) > 0) overrides.emplace_back(key, value);
      std::optional<double> t_final;
      if (resume_cmd->count("--t-final") > 0) t_final = resume_t_final;
      const RunSummary s = resume_experiment(resume_from, t_final, overrides);
      fmt::print("resume complete: t = {}, steps = {}, mix events = {}\n", s.final_time,
                 s.steps_done, s.mix_events);
    } else if (*oracle_cmd) {
      ExperimentConfig cfg = oracle_flags.resolve(oracle_cmd);
      cfg.mode = RunMode::Oracle;
      const OracleSummary s = reference_run(cfg, oracle_sites);
      fmt::print("oracle complete: bulk site {}, vmax = {}, tail average = {}\n", s.bulk_site,
                 s.vmax, s.tail_average);
    } else if (*avg_cmd) {
      const CsvTable table = read_csv(avg_input);
      const double value =
          time_average(column_series(table, "t", avg_column), avg_from, avg_to);
      fmt::print("{}\n", value);
    }
  } catch (const NumericalAbort& e) {
    fmt::print(stderr, "abort: {}\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
  return 0;
}

}  // namespace entmix
