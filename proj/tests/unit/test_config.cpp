#include <gtest/gtest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>

#include "npgrid/config.hpp"

using namespace npgrid;

namespace {

class ConfigFile {
 public:
  explicit ConfigFile(const std::string& text)
      : path_(std::filesystem::temp_directory_path() /
              ("npgrid_cfg_" + std::to_string(::getpid()) + "_" + std::to_string(counter_++) + ".toml")) {
    std::ofstream(path_) << text;
  }
  ~ConfigFile() { std::filesystem::remove(path_); }
  const std::filesystem::path& path() const { return path_; }

 private:
  static inline int counter_ = 0;
  std::filesystem::path path_;
};

const std::map<std::string, std::string> kNoEnv;

}  // namespace

TEST(Config, EmptyFileGivesDefaults) {
  ConfigFile f("");
  const ResolvedConfig c = resolve_config(f.path(), {}, kNoEnv);
  for (const KeySpec& k : config_schema()) {
    EXPECT_EQ(c.text(k.key), k.default_value) << k.key;
  }
  EXPECT_EQ(c.at("train.learning_rate").source, "default");
  EXPECT_EQ(c.at("train.epochs").source, "preset:desk");
  const TrainConfig t = to_train_config(c);
  EXPECT_EQ(t.epochs, 20u);
  EXPECT_EQ(t.learning_rate, 1e-3);
  EXPECT_EQ(t.model.kind, ModelKind::GBCoNP);
}

TEST(Config, OverrideBeatsFile) {
  ConfigFile f("[train]\nlearning_rate = 0.01\n");
  const ResolvedConfig c = resolve_config(f.path(), {"train.learning_rate=0.001"}, kNoEnv);
  EXPECT_EQ(c.get_real("train.learning_rate"), 0.001);
  EXPECT_EQ(c.at("train.learning_rate").source, "override");
  EXPECT_EQ(resolve_config(f.path(), {}, kNoEnv).get_real("train.learning_rate"), 0.01);
}

TEST(Config, EnvironmentSeed) {
  const ResolvedConfig c = resolve_config(std::nullopt, {}, {{"NPGRID_SEED", "7"}});
  EXPECT_EQ(c.get_int("run.seed"), 7);
  EXPECT_EQ(to_train_config(c).seed, 7u);
  const ResolvedConfig d = resolve_config(std::nullopt, {"run.seed=3"}, {{"NPGRID_SEED", "7"}});
  EXPECT_EQ(d.get_int("run.seed"), 7);
  const ResolvedConfig e = resolve_config(std::nullopt, {}, {{"NPGRID_TRAIN_EPOCHS", "3"}});
  EXPECT_EQ(e.get_int("train.epochs"), 3);
}

TEST(Config, UnknownKeysRejectedWithLayerName) {
  ConfigFile f("[train]\nepochz = 3\n");
  try {
    resolve_config(f.path(), {}, kNoEnv);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("train.epochz"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("file"), std::string::npos) << e.what();
  }
  EXPECT_THROW(resolve_config(std::nullopt, {"model.depht=2"}, kNoEnv), ConfigError);
  EXPECT_THROW(resolve_config(std::nullopt, {}, {{"NPGRID_BOGUS", "1"}}), ConfigError);
}

TEST(Config, TypeMismatchesRejected) {
  EXPECT_THROW(resolve_config(std::nullopt, {"train.epochs=many"}, kNoEnv), ConfigError);
  EXPECT_THROW(resolve_config(std::nullopt, {"train.learning_rate=fast"}, kNoEnv), ConfigError);
  EXPECT_THROW(resolve_config(std::nullopt, {"model.kind=anp"}, kNoEnv), ConfigError);
  EXPECT_THROW(resolve_config(std::nullopt, {"model.mlp_hidden=8,x"}, kNoEnv), ConfigError);
  EXPECT_THROW(resolve_config(std::nullopt, {"train.epochs"}, kNoEnv), ConfigError);
}

TEST(Config, MalformedFileRejected) {
  ConfigFile missing_bracket("[train\nepochs = 2\n");
  EXPECT_THROW(resolve_config(missing_bracket.path(), {}, kNoEnv), ConfigError);
  ConfigFile no_equals("[train]\nepochs 2\n");
  EXPECT_THROW(resolve_config(no_equals.path(), {}, kNoEnv), ConfigError);
  EXPECT_THROW(resolve_config(std::filesystem::path("/nonexistent/c.toml"), {}, kNoEnv), ConfigError);
}

TEST(Config, CommentsAndWhitespace) {
  const auto kv = parse_config_text("# top\n[model]\n  kind = np   # inline\n\n[train]\nepochs=4\n", "t");
  ASSERT_EQ(kv.size(), 2u);
  EXPECT_EQ(kv[0], (std::pair<std::string, std::string>{"model.kind", "np"}));
  EXPECT_EQ(kv[1], (std::pair<std::string, std::string>{"train.epochs", "4"}));
}

TEST(Config, PresetSelection) {
  const ResolvedConfig paper = resolve_config(std::nullopt, {"run.preset=paper"}, kNoEnv);
  EXPECT_EQ(paper.preset(), "paper");
  EXPECT_EQ(paper.get_int("data.train_tasks"), 50000);
  EXPECT_EQ(paper.get_int("train.epochs"), 100);
  const ResolvedConfig mixed = resolve_config(std::nullopt, {"run.preset=paper", "train.epochs=5"}, kNoEnv);
  EXPECT_EQ(mixed.get_int("train.epochs"), 5);
  EXPECT_EQ(mixed.get_int("data.val_tasks"), 10000);
  EXPECT_THROW(resolve_config(std::nullopt, {"run.preset=huge"}, kNoEnv), ConfigError);
}

TEST(Config, ValidationSurfacesTheKey) {
  const ResolvedConfig c = resolve_config(std::nullopt, {"train.epochs=0"}, kNoEnv);
  try {
    to_train_config(c);
    FAIL() << "expected a validation error";
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("epochs"), std::string::npos);
  }
}

TEST(Config, EvalSettings) {
  const ResolvedConfig c =
      resolve_config(std::nullopt, {"eval.probe_epsilons=2,9", "eval.manip_dims=1,3"}, kNoEnv);
  const EvalSettings s = to_eval_settings(c);
  EXPECT_EQ(s.probe_epsilons, (std::vector<std::size_t>{2, 9}));
  EXPECT_EQ(s.manip_dims, (std::pair<std::size_t, std::size_t>{1, 3}));
  EXPECT_THROW(to_eval_settings(resolve_config(std::nullopt, {"eval.manip_dims=1"}, kNoEnv)), ContractError);
}

TEST(Config, DescribeListsEveryKeyWithSource) {
  const ResolvedConfig c = resolve_config(std::nullopt, {"train.epochs=2"}, kNoEnv);
  const auto lines = c.describe();
  EXPECT_EQ(lines.size(), config_schema().size());
  bool found = false;
  for (const auto& l : lines) found = found || (l.find("train.epochs = 2") != std::string::npos && l.find("override") != std::string::npos);
  EXPECT_TRUE(found);
}
