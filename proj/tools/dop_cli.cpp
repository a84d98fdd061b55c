// Experiment runner: `run <config.json>` trains every (algorithm, seed)
// cell, `accept <suite>` runs a canned acceptance block.

#include <iostream>

#include "CLI11.hpp"

#include "dop/harness/acceptance.hpp"

namespace {

constexpr int kInvalid = 2;
constexpr int kDiverged = 3;

int cmd_run(const std::string& path, const dop::harness::RunOptions& opt) {
  using namespace dop::harness;
  RunConfig cfg;
  try {
    cfg = load_config(path);
  } catch (const dop::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInvalid;
  }
  const auto sum = run_config(cfg, opt);
  for (const auto& c : sum.cells) {
    std::cout << c.run_id << ": " << to_string(c.status) << ", " << c.rows << " rows -> " << (sum.out_dir / c.csv).string();
    if (c.status == CellStatus::Diverged) std::cout << " (non-finite value at step " << c.failed_step << ")";
    if (c.status == CellStatus::Failed) std::cout << " (" << c.message << ")";
    std::cout << '\n';
  }
  std::cout << "manifest: " << (sum.out_dir / "manifest.json").string() << '\n';
  const int code = sum.exit_code();
  if (code == kDiverged) std::cerr << "error: training diverged; see the manifest for the failing step\n";
  return code;
}

int cmd_accept(const std::string& suite, const dop::harness::AcceptanceOptions& opt) {
  using namespace dop::harness;
  const auto& names = suite_names();
  if (std::find(names.begin(), names.end(), suite) == names.end()) {
    std::cerr << "error: unknown suite '" << suite << "' (expected one of:";
    for (const auto& n : names) std::cerr << ' ' << n;
    std::cerr << ")\n";
    return kInvalid;
  }
  const auto results = run_suite(suite, opt, &std::cout);
  bool ok = true;
  for (const auto& r : results) ok = ok && r.pass;
  return ok ? 0 : 1;
}

int cmd_defaults(const std::string& algorithm, const std::string& env) {
  using namespace dop::harness;
  if (std::find(algorithm_tags().begin(), algorithm_tags().end(), algorithm) == algorithm_tags().end()) {
    std::cerr << "error: unknown algorithm '" << algorithm << "'\n";
    return kInvalid;
  }
  json d;
  switch (family_of(algorithm, env)) {
    case Family::Stochastic: d = defaults_of<dop::algo::StochasticConfig>(); break;
    case Family::Deterministic: d = defaults_of<dop::algo::DeterministicConfig>(); break;
    case Family::Coma: d = defaults_of<dop::baselines::ComaConfig>(); break;
    case Family::MaddpgDiscrete: d = defaults_of<dop::baselines::MaddpgConfig>(); break;
  }
  std::cout << d.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decomposed off-policy multi-agent policy gradients: experiment runner"};
  app.require_subcommand(1);

  std::optional<std::string> out;
  int parallel = 1;
  std::uint64_t seed_offset = 0;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--out", out, "output directory (overrides the config)");
    sub->add_option("--parallel", parallel, "worker threads for independent cells")->check(CLI::PositiveNumber);
    sub->add_option("--seed-offset", seed_offset, "added to every seed");
  };

  std::string config_path;
  auto* run = app.add_subcommand("run", "train every (algorithm, seed) cell of a config");
  run->add_option("config", config_path, "JSON run config")->required();
  common(run);

  std::string suite;
  int seeds = 12;
  auto* accept = app.add_subcommand("accept", "run an acceptance suite");
  accept->add_option("suite", suite, "oracles | matrix_game | aggregation | mill | improvement")->required();
  accept->add_option("--seeds", seeds, "seeds per learning experiment")->check(CLI::PositiveNumber);
  common(accept);

  std::string algorithm, env = "matrix_game";
  auto* defaults = app.add_subcommand("defaults", "print the default hyperparameters of an algorithm");
  defaults->add_option("algorithm", algorithm)->required();
  defaults->add_option("--env", env, "environment tag (selects MADDPG's discrete or continuous variant)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kInvalid;
  }

  try {
    if (run->parsed()) {
      dop::harness::RunOptions opt;
      opt.out_dir = out;
      opt.parallel = parallel;
      opt.seed_offset = seed_offset;
      return cmd_run(config_path, opt);
    }
    if (accept->parsed()) {
      dop::harness::AcceptanceOptions opt;
      opt.seeds = seeds;
      opt.seed_offset = seed_offset;
      opt.parallel = parallel;
      opt.out_dir = out;
      return cmd_accept(suite, opt);
    }
    return cmd_defaults(algorithm, env);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
