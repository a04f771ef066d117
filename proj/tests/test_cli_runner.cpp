#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "acstate/config_file.hpp"
#include "acstate/experiment.hpp"

using namespace acstate;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("acstate_test_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

int cli(const std::string& args) {
  const std::string cmd = std::string(ACSTATE_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

const std::string kGolden = std::string(ACSTATE_SOURCE_DIR) + "/configs/golden_toggle.yaml";

}  // namespace

TEST(Config, EmitParseRoundTripKeepsHash) {
  ExperimentConfig cfg;
  cfg.seed = 11;
  cfg.method = Method::contrastive;
  cfg.train.learning_rate = 3.5e-4;
  cfg.environment.layout = "four_rooms";
  const auto back = config::parse_yaml(config::emit(cfg));
  EXPECT_EQ(config::hash(back), config::hash(cfg));
  EXPECT_EQ(config::emit(back), config::emit(cfg));
}

TEST(Config, HashIgnoresOutputDirOnly) {
  ExperimentConfig a, b;
  b.output_dir = "elsewhere";
  EXPECT_EQ(config::hash(a), config::hash(b));
  b.train.K = 3;
  EXPECT_NE(config::hash(a), config::hash(b));
  EXPECT_EQ(config::hash(a).size(), 16u);
  EXPECT_EQ(config::header_line(config::hash(a)), "# acstate 0.1.0 config " + config::hash(a));
}

TEST(Config, SchemaListsEveryField) {
  const auto s = config::schema();
  for (const auto& f : config::fields()) {
    const auto leaf = f.key.substr(f.key.rfind('.') + 1);
    EXPECT_NE(s.find(leaf + ":"), std::string::npos) << f.key;
  }
}

TEST(Config, FieldLevelErrors) {
  auto expect_msg = [](const std::string& yaml, const std::string& needle) {
    try {
      config::parse_yaml(yaml);
      FAIL() << "accepted: " << yaml;
    } catch (const ConfigError& e) {
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
  };
  expect_msg("train:\n  Kx: 3\n", "train.Kx");
  expect_msg("train:\n  K: three\n", "train.K");
  expect_msg("method: magic\n", "method");
  expect_msg("environment:\n  width: [1, 2]\n", "environment.width");
  ExperimentConfig cfg;
  cfg.policy = PolicyKind::planning;
  cfg.method = Method::onestep;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Config, ShippedConfigsParse) {
  int n = 0;
  for (const auto& e : fs::directory_iterator(fs::path(ACSTATE_SOURCE_DIR) / "configs")) {
    if (e.path().extension() != ".yaml") continue;
    EXPECT_NO_THROW(config::load_file(e.path().string()).validate()) << e.path();
    ++n;
  }
  EXPECT_GE(n, 7);
  EXPECT_THROW(config::load_file("/nonexistent/x.yaml"), ConfigError);
}

TEST(Runner, GoldenToggleIsReproducible) {
  auto cfg = config::load_file(kGolden);
  const auto a = scratch("golden_a"), b = scratch("golden_b");
  cfg.output_dir = a.string();
  const auto out = run_experiment(cfg);
  cfg.output_dir = b.string();
  run_experiment(cfg);
  EXPECT_DOUBLE_EQ(out.report.purity, 1.0);
  EXPECT_DOUBLE_EQ(out.report.coverage, 1.0);
  for (const char* f : {"report.txt", "metrics.jsonl", "checkpoint.txt", "trajectory.tsv", "latent_graph.txt",
                        "cooccurrence.txt", "visits.pgm", "codes_per_state.pgm"}) {
    ASSERT_TRUE(fs::exists(a / f)) << f;
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
  const auto header = config::header_line(config::hash(cfg));
  EXPECT_EQ(slurp(a / "report.txt").substr(0, header.size()), header);
  EXPECT_NE(slurp(a / "visits.pgm").find("P2\n" + header + "\n"), std::string::npos);
  EXPECT_FALSE(fs::exists(a / ".lock"));
}

TEST(Runner, LockedOutputDirIsRejected) {
  const auto dir = scratch("locked");
  OutputLock held(dir);
  EXPECT_THROW(OutputLock second(dir), ConfigError);
  auto cfg = config::load_file(kGolden);
  cfg.output_dir = dir.string();
  EXPECT_THROW(run_experiment(cfg), ConfigError);
}

TEST(Theory, FixedFindingsReadAsExpected) {
  const auto rep = verify_theory(20, 0);
  EXPECT_TRUE(rep.findings[0].pass);
  ASSERT_EQ(rep.findings.size(), 4u);
  EXPECT_EQ(rep.findings[1].name, "6-cycle with stay action");
  EXPECT_NE(rep.findings[1].detail.find("K=1 coarsest has 3 blocks; K=3 has 6"), std::string::npos);
  EXPECT_TRUE(rep.findings[2].pass);
  EXPECT_NE(rep.findings[3].detail.find("K=3 has 3"), std::string::npos);
  EXPECT_FALSE(verify_theory(200, 0, 2).pass());
}

TEST(Cli, ExitCodes) {
  const auto root = scratch("cli");
  EXPECT_EQ(cli("config-schema"), 0);
  EXPECT_EQ(cli("run --config /nonexistent.yaml"), 2);
  EXPECT_EQ(cli("frobnicate"), 2);
  EXPECT_EQ(cli("verify-theory --n 50 --quiet"), 0);
  EXPECT_EQ(cli("verify-theory --n 200 --inject-skip-horizon 2 --quiet --out " + (root / "theory").string()), 1);
  EXPECT_TRUE(fs::exists(root / "theory" / "witness.txt"));
  fs::create_directories(root / "empty");
  EXPECT_EQ(cli("report " + (root / "empty").string()), 2);
  EXPECT_EQ(cli("run --quiet --config " + kGolden + " --out " + (root / "runs" / "g").string()), 0);
  EXPECT_EQ(cli("report --quiet " + (root / "runs").string()), 0);
  EXPECT_TRUE(fs::exists(root / "runs" / "summary.csv"));
}
