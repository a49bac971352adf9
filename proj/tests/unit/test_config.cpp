#include <gtest/gtest.h>

#include <sstream>

#include "transukan/config.hpp"
#include "transukan/error.hpp"

using namespace tukan;

namespace {

KeyValues parse(const std::string& text) {
  std::istringstream in(text);
  return parse_key_values(in, "test.cfg");
}

std::string message_of(const std::string& text) {
  try {
    parse(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(ConfigFile, ParsesKeyValueLines) {
  const KeyValues kv = parse("# header\n\nlr = 3e-4   # peak\n  depth=2\nblock_order = pre-norm\n");
  EXPECT_EQ(kv, (KeyValues{{"lr", "3e-4"}, {"depth", "2"}, {"block_order", "pre-norm"}}));
}

TEST(ConfigFile, ErrorsNameSourceAndLine) {
  EXPECT_NE(message_of("lr = 1\nnonsense\n").find("test.cfg:2"), std::string::npos);
  EXPECT_NE(message_of("lr = 1\nlr = 2\n").find("duplicate"), std::string::npos);
  EXPECT_NE(message_of("lr =\n").find("test.cfg:1"), std::string::npos);
  EXPECT_THROW(read_config_file("/nonexistent/dir/x.cfg"), ConfigError);
}

TEST(RunConfig, PrecedenceFlagFileEnvDefault) {
  RunConfig rc;
  EXPECT_EQ(rc.get("seed"), "0");
  EXPECT_EQ(rc.source("seed"), "default");
  rc.apply_env_seed("7");
  EXPECT_EQ(rc.get("seed"), "7");
  rc.apply_file({{"seed", "8"}, {"epochs", "3"}});
  EXPECT_EQ(rc.get("seed"), "8");
  EXPECT_EQ(rc.source("seed"), "file");
  rc.apply_flags({{"seed", "9"}});
  EXPECT_EQ(rc.get_u64("seed"), 9u);
  EXPECT_EQ(rc.source("seed"), "flag");
  // A later lower-ranked source does not override.
  rc.apply_env_seed("1");
  rc.apply_file({{"seed", "2"}});
  EXPECT_EQ(rc.get("seed"), "9");
  EXPECT_EQ(rc.get_size("epochs"), 3u);
  rc.apply_env_seed("");
  rc.apply_env_seed(nullptr);
  EXPECT_EQ(rc.get("seed"), "9");
}

TEST(RunConfig, TypedGettersRejectBadValues) {
  RunConfig rc;
  rc.apply_flags({{"lr", "fast"}, {"epochs", "-3"}, {"augment", "maybe"}});
  EXPECT_THROW(rc.get_double("lr"), ConfigError);
  EXPECT_THROW(rc.get_size("epochs"), ConfigError);
  EXPECT_THROW(rc.get_bool("augment"), ConfigError);
  EXPECT_THROW(rc.apply_file({{"learning_rate", "1"}}), ConfigError);
  EXPECT_THROW(rc.get("learning_rate"), ConfigError);
}

TEST(RunConfig, DefaultsBuildValidConfigs) {
  RunConfig rc;
  const ModelConfig m = model_config_from(rc);
  EXPECT_EQ(m.image_height, 64u);
  EXPECT_EQ(m.d_model, 64u);
  EXPECT_EQ(m.grid.n_basis(), 8u);
  const TrainConfig t = train_config_from(rc);
  EXPECT_DOUBLE_EQ(t.lr_base, 1e-4);
  EXPECT_EQ(t.epochs, 200u);
  EXPECT_EQ(t.warmup_epochs, 10u);
  const ArchConfig a = arch_config_from(rc);
  EXPECT_EQ(a.n_tokens, 64u);
  rc.apply_flags({{"block_order", "sideways"}});
  EXPECT_THROW(model_config_from(rc), ConfigError);
}

TEST(RunConfig, EchoListsValueAndSource) {
  RunConfig rc;
  rc.apply_flags({{"depth", "2"}});
  std::ostringstream out;
  rc.echo(out, {"depth", "heads"});
  EXPECT_EQ(out.str(), "depth = 2  [flag]\nheads = 4  [default]\n");
  for (const KeySpec& k : config_schema()) EXPECT_FALSE(k.help.empty()) << k.key;
}
