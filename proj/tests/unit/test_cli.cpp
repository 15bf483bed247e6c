#include <gtest/gtest.h>

#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cli.hpp"
#include "npgrid/config.hpp"
#include "npgrid/container.hpp"

using namespace npgrid;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code;
  std::string out;
  std::string err;
};

CliRun cli(std::vector<std::string> args) {
  std::ostringstream out;
  std::ostringstream err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// A tiny model and dataset so an end-to-end run takes well under a second.
const std::vector<std::string> kTiny = {
    "--override", "model.mlp_hidden=8",     "--override", "model.conv_depth=1",
    "--override", "model.conv_channels=4",  "--override", "model.d_z=3",
    "--override", "model.r_dim=4",          "--override", "model.points_per_unit=8",
    "--override", "data.n_points=20",       "--override", "data.max_context=8",
    "--override", "data.train_tasks=8",     "--override", "data.val_tasks=3",
    "--override", "data.test_tasks=3",      "--override", "train.epochs=1",
    "--override", "train.batch_size=4",     "--override", "eval.n_z=4",
    "--override", "eval.bands_n_z=3",       "--override", "eval.manip_steps=2",
    "--override", "eval.probe_epsilons=1,5"};

std::vector<std::string> with(std::vector<std::string> head, const std::vector<std::string>& tail) {
  head.insert(head.end(), tail.begin(), tail.end());
  return head;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    for (const auto& [name, value] : npgrid_environment()) ::unsetenv(name.c_str());
    dir_ = fs::temp_directory_path() / ("npgrid_cli_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string out() const { return dir_.string(); }
  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, HelpExitsZeroForEverySubcommand) {
  EXPECT_EQ(cli({"--help"}).code, kExitOk);
  for (const char* sub : {"gen-data", "train", "eval", "probe", "manipulate", "bands"}) {
    const CliRun r = cli({sub, "--help"});
    EXPECT_EQ(r.code, kExitOk) << sub;
    for (const KeySpec& k : config_schema()) {
      EXPECT_NE(r.out.find(k.key), std::string::npos) << sub << " help lacks " << k.key;
    }
  }
}

TEST_F(CliTest, UsageErrorsExitOne) {
  EXPECT_EQ(cli({}).code, kExitUsage);
  EXPECT_EQ(cli({"frobnicate"}).code, kExitUsage);
  EXPECT_EQ(cli({"train", "--no-such-flag"}).code, kExitUsage);
  const CliRun r = cli({"train", "--out", out(), "--override", "train.epochs=0"});
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_NE(r.err.find("epochs"), std::string::npos);
  EXPECT_EQ(cli({"train", "--out", out(), "--override", "train.epohcs=2"}).code, kExitUsage);
}

TEST_F(CliTest, MissingCheckpointIsARuntimeError) {
  EXPECT_EQ(cli({"eval", "--out", out()}).code, kExitRuntime);
}

TEST_F(CliTest, TrainThenEveryReadingSubcommand) {
  ASSERT_EQ(cli(with({"train", "--out", out(), "--seed", "5"}, kTiny)).code, kExitOk);
  EXPECT_TRUE(fs::exists(dir_ / "checkpoint.gbcn"));
  EXPECT_TRUE(fs::exists(dir_ / "metrics.jsonl"));

  const CliRun e1 = cli(with({"eval", "--out", out(), "--seed", "5"}, kTiny));
  ASSERT_EQ(e1.code, kExitOk) << e1.err;
  const std::string first = slurp(dir_ / "eval.json");
  ASSERT_EQ(cli(with({"eval", "--out", out(), "--seed", "5"}, kTiny)).code, kExitOk);
  EXPECT_EQ(slurp(dir_ / "eval.json"), first);
  EXPECT_TRUE(nlohmann::json::parse(first).contains("ll_mean"));

  const CliRun p = cli(with({"probe", "--out", out(), "--seed", "5", "--epsilon", "1"}, kTiny));
  ASSERT_EQ(p.code, kExitOk) << p.err;
  EXPECT_NE(slurp(dir_ / "probe.json").find("sigma_z_mean"), std::string::npos);

  ASSERT_EQ(cli(with({"manipulate", "--out", out(), "--task-id", "1"}, kTiny)).code, kExitOk);
  std::istringstream grid(slurp(dir_ / "grid.jsonl"));
  int lines = 0;
  for (std::string l; std::getline(grid, l);) ++lines;
  EXPECT_EQ(lines, 4);

  ASSERT_EQ(cli(with({"bands", "--out", out(), "--task-id", "0"}, kTiny)).code, kExitOk);
  std::istringstream bands(slurp(dir_ / "bands.jsonl"));
  lines = 0;
  for (std::string l; std::getline(bands, l);) ++lines;
  EXPECT_EQ(lines, 3);

  EXPECT_EQ(cli(with({"bands", "--out", out(), "--task-id", "99"}, kTiny)).code, kExitUsage);
}

TEST_F(CliTest, SeededTrainingIsReproducible) {
  ASSERT_EQ(cli(with({"train", "--out", (dir_ / "a").string(), "--seed", "2"}, kTiny)).code, kExitOk);
  ASSERT_EQ(cli(with({"train", "--out", (dir_ / "b").string(), "--seed", "2"}, kTiny)).code, kExitOk);
  EXPECT_EQ(read_file_bytes(dir_ / "a" / "checkpoint.gbcn"), read_file_bytes(dir_ / "b" / "checkpoint.gbcn"));
}

TEST_F(CliTest, ConfigIsLoggedWithPreset) {
  const CliRun r = cli(with({"train", "--out", out()}, kTiny));
  ASSERT_EQ(r.code, kExitOk);
  EXPECT_NE(r.err.find("[npgrid] preset: desk"), std::string::npos);
  EXPECT_NE(r.err.find("[config] train.epochs = 1"), std::string::npos);
}

TEST_F(CliTest, GenDataThenTrainFromDirectory) {
  ASSERT_EQ(cli(with({"gen-data", "--out", out()}, kTiny)).code, kExitOk);
  EXPECT_TRUE(fs::exists(dir_ / "data" / "train"));
  const std::string data = (dir_ / "data").string();
  const CliRun r = cli(with({"train", "--out", (dir_ / "m").string(), "--override", "data.source=dir",
                          "--override", "data.path=" + data},
                         kTiny));
  EXPECT_EQ(r.code, kExitOk) << r.err;
}
