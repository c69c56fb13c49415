// Command-line front end for the unlearning arena.
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "unlearn_arena/cli.hpp"

namespace {

arena::ExperimentConfig load(const std::string& path, std::optional<std::size_t> trials,
                             std::optional<std::size_t> threads, const std::string& out_dir) {
  std::ifstream in(path);
  if (!in) throw arena::Error(arena::ErrorKind::ConfigError, "cannot open config " + path);
  arena::ExperimentConfig e = arena::parse_config(in, path);
  arena::apply_seed_override(e);
  if (trials) e.game.trials = *trials;
  if (threads) e.game.threads = *threads;
  if (!out_dir.empty()) e.output.dir = out_dir;
  return e;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unlearning game arena: trains small models, unlearns, and plays the distinguishing game."};
  app.require_subcommand(1);

  std::string config_path, out_dir, results_dir;
  std::optional<std::size_t> trials, threads;
  std::size_t instances = 100;
  double ridge = 0.0;
  bool inject_fault = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("config", config_path, "INI configuration file")->required();
    sub->add_option("--trials", trials, "override the number of game trials");
    sub->add_option("--threads", threads, "worker threads for trials");
    sub->add_option("--out", out_dir, "override the output directory");
  };
  auto* game = app.add_subcommand("game", "run one game and write its report");
  add_common(game);
  auto* sweep_forget = app.add_subcommand("sweep-forget", "success rate across forget-set sizes");
  add_common(sweep_forget);
  auto* sweep_sigma = app.add_subcommand("sweep-sigma", "newton-removal KLDScore across the sigma grid");
  add_common(sweep_sigma);
  auto* dp = app.add_subcommand("demo-dp-collapse", "oracle accuracy of a DP-wrapped classifier across epsilon");
  add_common(dp);
  auto* verify = app.add_subcommand("verify-perfect", "perfect-unlearning identity suite");
  verify->add_option("--instances", instances, "random instances per case");
  verify->add_option("--ridge", ridge, "linear regression ridge");
  verify->add_flag("--inject-fault", inject_fault, "skip the moment downdate (mutation check)");
  auto* report = app.add_subcommand("report", "merge results.csv files and emit plot tables");
  report->add_option("dir", results_dir, "results directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? arena::kExitOk : arena::kExitConfig;
  }

  try {
    if (*game) return arena::cmd_game(load(config_path, trials, threads, out_dir), std::cout);
    if (*sweep_forget) return arena::cmd_sweep_forget(load(config_path, trials, threads, out_dir), std::cout);
    if (*sweep_sigma) return arena::cmd_sweep_sigma(load(config_path, trials, threads, out_dir), std::cout);
    if (*dp) return arena::cmd_demo_dp_collapse(load(config_path, trials, threads, out_dir), std::cout);
    if (*verify) {
      arena::VerifyOptions o;
      o.instances = instances;
      o.ridge = ridge;
      o.skip_moment_downdate = inject_fault;
      return arena::cmd_verify_perfect(o, std::cout);
    }
    if (*report) return arena::cmd_report(results_dir, std::cout);
  } catch (const arena::Error& e) {
    std::cerr << "error (" << arena::to_string(e.kind()) << "): " << e.what() << "\n";
    return arena::exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return arena::kExitProperty;
  }
  return arena::kExitConfig;
}
