// Command-line front door: prepare data, train the three model variants and
// their sweeps, extract embeddings, run probes and verification, and emit
// consolidated report tables.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 only-diverged runs.

#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "dseb/experiment.hpp"
#include "dseb/log.hpp"
#include "dseb/runner.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir = "experiment";
  std::optional<std::uint64_t> seed;
};

dseb::exp::ExperimentConfig load(const CommonArgs& args) {
  dseb::Config raw = args.config_path.empty()
                         ? dseb::Config{}
                         : dseb::Config::load(args.config_path);
  return dseb::exp::resolve_config(raw, args.seed);
}

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "configuration file (key=value)");
  cmd->add_option("--out", args.out_dir, "experiment output directory");
  std::uint64_t* seed_slot = nullptr;
  (void)seed_slot;
  cmd->add_option_function<std::uint64_t>(
      "--seed", [&args](std::uint64_t s) { args.seed = s; },
      "override the global seed");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"speaker-embedding leakage measurement and mitigation"};
  app.require_subcommand(1);

  CommonArgs args;
  std::size_t jobs = 1;
  std::string run_name = "baseline";
  std::string split_name = "test";
  std::string branch_name = "full";

  CLI::App* prepare = app.add_subcommand(
      "prepare", "normalize the dataset, split speakers, cache features");
  add_common(prepare, args);

  CLI::App* train =
      app.add_subcommand("train", "train one model per the config train section");
  add_common(train, args);

  CLI::App* sweep = app.add_subcommand(
      "sweep", "run the full grid and consolidate the report");
  add_common(sweep, args);
  sweep->add_option("--jobs", jobs, "parallel grid workers");

  CLI::App* embed =
      app.add_subcommand("embed", "extract embeddings from a checkpoint");
  add_common(embed, args);
  embed->add_option("--run", run_name, "run directory name");
  embed->add_option("--split", split_name, "train|val|test")
      ->check(CLI::IsMember({"train", "val", "test"}));
  embed->add_option("--branch", branch_name, "full|demo|residual")
      ->check(CLI::IsMember({"full", "demo", "residual"}));

  CLI::App* probe = app.add_subcommand("probe", "run demographic probes");
  add_common(probe, args);
  probe->add_option("--run", run_name, "run directory name");
  probe->add_option("--branch", branch_name, "full|demo|residual")
      ->check(CLI::IsMember({"full", "demo", "residual"}));

  CLI::App* verify =
      app.add_subcommand("verify", "score verification trials");
  add_common(verify, args);
  verify->add_option("--run", run_name, "run directory name");
  verify->add_option("--branch", branch_name, "full|demo|residual")
      ->check(CLI::IsMember({"full", "demo", "residual"}));

  CLI::App* report =
      app.add_subcommand("report", "consolidate run directories into tables");
  add_common(report, args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    const dseb::exp::ExperimentConfig cfg = load(args);
    const std::filesystem::path out_root(args.out_dir);
    if (prepare->parsed()) {
      dseb::exp::cmd_prepare(cfg, out_root);
    } else if (train->parsed()) {
      dseb::exp::cmd_train(cfg, out_root);
    } else if (sweep->parsed()) {
      const std::size_t diverged = dseb::exp::cmd_sweep(cfg, out_root, jobs);
      if (diverged > 0) {
        dseb::log_error(std::to_string(diverged) + " grid point(s) diverged");
        return 3;
      }
    } else if (embed->parsed()) {
      const dseb::Split split = split_name == "train"  ? dseb::Split::train
                                : split_name == "val" ? dseb::Split::val
                                                      : dseb::Split::test;
      dseb::exp::cmd_embed(cfg, out_root, run_name, split,
                           dseb::branch_from_string(branch_name));
    } else if (probe->parsed()) {
      dseb::exp::cmd_probe(cfg, out_root, run_name,
                           dseb::branch_from_string(branch_name));
    } else if (verify->parsed()) {
      dseb::exp::cmd_verify(cfg, out_root, run_name,
                            dseb::branch_from_string(branch_name));
    } else if (report->parsed()) {
      dseb::exp::cmd_report(cfg, out_root);
    }
  } catch (const dseb::exp::DataError& e) {
    dseb::log_error(e.what());
    return 2;
  } catch (const dseb::TrainingDiverged& e) {
    dseb::log_error(e.what());
    return 3;
  } catch (const std::exception& e) {
    dseb::log_error(e.what());
    return 2;
  }
  return 0;
}
