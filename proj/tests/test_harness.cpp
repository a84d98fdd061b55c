#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "dop/harness/acceptance.hpp"
#include "dop/harness/runner.hpp"

using namespace dop;
using namespace dop::harness;
namespace fs = std::filesystem;

namespace {

const char* kSmall = R"({
  "algorithm": ["stochastic_dop", "coma"],
  "environment": {"name": "matrix_game"},
  "hyperparameters": {"critic_hidden": [8], "actor_hidden": [8]},
  "seeds": [0, 1],
  "total_steps": 200,
  "metric_period": 100
})";

fs::path temp_dir(const std::string& tag) {
  const auto p = fs::temp_directory_path() / ("dop_test_" + tag + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

SourcePos error_pos(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigParseError& e) {
    return e.pos();
  }
  ADD_FAILURE() << "config was accepted:\n" << text;
  return {};
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(DOP_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Config, ParsesAndFillsDefaults) {
  const auto c = parse_config(kSmall);
  EXPECT_EQ(c.algorithms, (std::vector<std::string>{"stochastic_dop", "coma"}));
  EXPECT_EQ(c.environment, "matrix_game");
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{0, 1}));
  EXPECT_EQ(c.total_steps, 200);
  EXPECT_EQ(c.eval_episodes, 1);
  EXPECT_EQ(c.variance_samples, 0);
  EXPECT_FALSE(c.record_wall_clock);
  const auto s = stochastic_config(c, "stochastic_dop");
  EXPECT_EQ(s.critic_hidden, std::vector<int>{8});
  EXPECT_EQ(s.tb.lambda_tb, 1.0);
  EXPECT_EQ(s.tb.lambda_on, 0.8);
}

TEST(Config, SerializeRoundTrip) {
  const auto c = parse_config(kSmall);
  const auto again = parse_config(serialize(c));
  EXPECT_EQ(c, again);
  EXPECT_EQ(serialize(c), serialize(again));
}

TEST(Config, VariantTagsSetKappa) {
  auto c = parse_config(R"({"algorithm": ["onpolicy_dop", "offpolicy_dop", "common_tb_dop"],
                            "environment": {"name": "matrix_game"}, "seeds": [0]})");
  EXPECT_EQ(stochastic_config(c, "onpolicy_dop").tb.kappa, 0.0);
  EXPECT_EQ(stochastic_config(c, "offpolicy_dop").tb.kappa, 1.0);
  EXPECT_EQ(stochastic_config(c, "common_tb_dop").expectation.mode, algo::ExpectationMode::Sampled);
}

TEST(Config, UnknownKeyReportsItsPosition) {
  const std::string text = "{\n  \"algorithm\": \"stochastic_dop\",\n  \"environment\": {\"name\": \"matrix_game\"},\n"
                           "  \"seeds\": [0],\n  \"hyperparameters\": {\n    \"critic_lr\": 0.1,\n"
                           "    \"learning_rte\": 0.2\n  }\n}\n";
  try {
    parse_config(text, "cfg.json");
    FAIL() << "accepted an unknown key";
  } catch (const ConfigParseError& e) {
    EXPECT_EQ(e.pos().line, 7);
    EXPECT_EQ(e.pos().column, 5);
    EXPECT_NE(std::string(e.what()).find("cfg.json:7:5"), std::string::npos) << e.what();
    EXPECT_NE(e.detail().find("learning_rte"), std::string::npos) << e.detail();
  }
}

TEST(Config, UnknownTopLevelKey) {
  const auto p = error_pos("{\"algorithm\": \"coma\", \"environment\": {\"name\": \"matrix_game\"},\n \"seedz\": [0]}");
  EXPECT_EQ(p.line, 2);
  EXPECT_EQ(p.column, 2);
}

TEST(Config, DuplicateKeyIsRejected) {
  const auto p = error_pos("{\"algorithm\": \"coma\",\n\"algorithm\": \"maddpg\", \"environment\": {\"name\": "
                           "\"matrix_game\"}, \"seeds\": [0]}");
  EXPECT_EQ(p.line, 2);
}

TEST(Config, TypeErrorsAreLocated) {
  const auto p = error_pos("{\"algorithm\": \"coma\", \"environment\": {\"name\": \"matrix_game\"},\n"
                           "\"seeds\": [0],\n\"total_steps\": \"many\"}");
  EXPECT_EQ(p.line, 3);
  EXPECT_EQ(error_pos("{\"algorithm\": \"coma\", \"environment\": {\"name\": \"matrix_game\"},\n"
                      "\"seeds\": [0, -1]}")
                .line,
            2);
  EXPECT_EQ(error_pos("{\"algorithm\": \"coma\", \"environment\": {\"name\": \"matrix_game\"},\n"
                      "\"seeds\": [3, 3]}")
                .line,
            2);
}

TEST(Config, SyntaxErrorsAreLocated) {
  const auto p = error_pos("{\n  \"algorithm\": \"coma\",\n  \"seeds\": [0,]\n}");
  EXPECT_EQ(p.line, 3);
}

TEST(Config, ActionSpaceMismatchPointsAtTheAlgorithm) {
  const auto p = error_pos("{\"environment\": {\"name\": \"mill\"},\n\"algorithm\": \"coma\", \"seeds\": [0]}");
  EXPECT_EQ(p.line, 2);
}

TEST(Config, KeysFromAnotherFamilyAreRejected) {
  // batch belongs to the deterministic trainers, not to COMA.
  EXPECT_THROW(parse_config(R"({"algorithm": "coma", "environment": {"name": "matrix_game"},
                                "seeds": [0], "hyperparameters": {"batch": 4}})"),
               ConfigParseError);
}

TEST(Runner, WritesOneCsvPerCellAndAManifest) {
  const auto dir = temp_dir("runner");
  const auto c = parse_config(kSmall);
  RunOptions opt;
  opt.out_dir = dir.string();
  const auto sum = run_config(c, opt);
  EXPECT_EQ(sum.exit_code(), 0);
  ASSERT_EQ(sum.cells.size(), 4u);
  for (const auto& cell : sum.cells) {
    const auto text = slurp(dir / cell.csv);
    std::istringstream lines(text);
    std::string header;
    std::getline(lines, header);
    EXPECT_EQ(header, "record_type,run_id,seed,step,train_return,eval_return,loss_tb,loss_on,loss_td,k_spread,"
                      "grad_variance,bias,argmax_actions,wall_clock");
    long rows = 0;
    for (std::string l; std::getline(lines, l);) {
      ++rows;
      EXPECT_EQ(std::count(l.begin(), l.end(), ','), 13) << l;
    }
    EXPECT_EQ(rows, cell.rows);
    EXPECT_EQ(rows, 2);
  }
  const auto m = json::parse(slurp(dir / "manifest.json"));
  EXPECT_EQ(m["cells"].size(), 4u);
  EXPECT_EQ(parse_config(m["config"].dump()), c);
  fs::remove_all(dir);
}

TEST(Runner, RerunsAreByteIdenticalSeriallyAndInParallel) {
  const auto a = temp_dir("serial"), b = temp_dir("parallel");
  const auto c = parse_config(kSmall);
  run_config(c, {a.string(), 1, 0});
  run_config(c, {b.string(), 2, 0});
  for (const auto& e : fs::directory_iterator(a)) EXPECT_EQ(slurp(e.path()), slurp(b / e.path().filename()));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Runner, SeedOffsetShiftsSeeds) {
  const auto dir = temp_dir("offset");
  auto c = parse_config(kSmall);
  c.algorithms = {"coma"};
  const auto sum = run_config(c, {dir.string(), 1, 10});
  EXPECT_EQ(sum.cells[0].seed, 10u);
  EXPECT_EQ(sum.cells[1].seed, 11u);
  EXPECT_TRUE(fs::exists(dir / "coma_seed10.csv"));
  fs::remove_all(dir);
}

TEST(Acceptance, RequiredCountRoundsUp) {
  EXPECT_EQ(required_count(10, 12, 12), 10);
  EXPECT_EQ(required_count(10, 12, 5), 5);
  EXPECT_EQ(required_count(8, 10, 12), 10);
}

TEST(Acceptance, FastCriteriaPass) {
  EXPECT_TRUE(check_read_complexity().pass);
  EXPECT_TRUE(check_expectation_decomposition(2, 50).pass);
  EXPECT_TRUE(check_tree_backup(3, 100).pass);
}

TEST(Cli, UnknownKeyExitsTwoWithLocation) {
  const auto dir = temp_dir("cli_key");
  std::ofstream(dir / "bad.json") << "{\"algorithm\": \"coma\", \"environment\": {\"name\": \"matrix_game\"},\n"
                                     "  \"seeds\": [0], \"bogus\": 1}\n";
  EXPECT_EQ(run_cli("run " + (dir / "bad.json").string(), dir / "log"), 2);
  EXPECT_NE(slurp(dir / "log").find("bad.json:2:17"), std::string::npos) << slurp(dir / "log");
  fs::remove_all(dir);
}

TEST(Cli, MissingConfigFileExitsTwo) {
  const auto dir = temp_dir("cli_missing");
  EXPECT_EQ(run_cli("run " + (dir / "nope.json").string(), dir / "log"), 2);
  fs::remove_all(dir);
}

TEST(Cli, UnknownSuiteExitsTwo) {
  const auto dir = temp_dir("cli_suite");
  EXPECT_EQ(run_cli("accept no_such_suite", dir / "log"), 2);
  fs::remove_all(dir);
}

TEST(Cli, DivergenceExitsThreeAndRecordsTheStep) {
  const auto dir = temp_dir("cli_diverge");
  std::ofstream(dir / "hot.json") << R"({"algorithm": "stochastic_dop", "environment": {"name": "matrix_game"},
    "hyperparameters": {"critic_lr": 1e200, "critic_hidden": [8], "actor_hidden": [8]},
    "seeds": [0], "total_steps": 2000, "metric_period": 100})";
  EXPECT_EQ(run_cli("run " + (dir / "hot.json").string() + " --out " + (dir / "out").string(), dir / "log"), 3);
  const auto m = json::parse(slurp(dir / "out" / "manifest.json"));
  ASSERT_EQ(m["cells"].size(), 1u);
  EXPECT_EQ(m["cells"][0]["status"], "diverged");
  const long step = m["cells"][0]["failed_step"];
  EXPECT_GT(step, 0);
  const auto csv = slurp(dir / "out" / "stochastic_dop_seed0.csv");
  EXPECT_NE(csv.find("divergence,stochastic_dop_seed0,0," + std::to_string(step)), std::string::npos) << csv;
  fs::remove_all(dir);
}

TEST(Cli, RunWritesOutputs) {
  const auto dir = temp_dir("cli_run");
  std::ofstream(dir / "ok.json") << kSmall;
  EXPECT_EQ(run_cli("run " + (dir / "ok.json").string() + " --out " + (dir / "out").string() + " --parallel 2 --seed-offset 3",
                    dir / "log"),
            0)
      << slurp(dir / "log");
  EXPECT_TRUE(fs::exists(dir / "out" / "coma_seed4.csv"));
  EXPECT_TRUE(fs::exists(dir / "out" / "manifest.json"));
  fs::remove_all(dir);
}

TEST(Examples, ShippedConfigsParse) {
  int seen = 0;
  for (const auto& e : fs::directory_iterator(fs::path(DOP_SOURCE_DIR) / "examples" / "configs")) {
    if (e.path().extension() != ".json") continue;
    ++seen;
    EXPECT_NO_THROW(load_config(e.path().string())) << e.path();
  }
  EXPECT_GE(seen, 4);
}
