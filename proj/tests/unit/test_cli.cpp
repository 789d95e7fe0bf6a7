#ifdef ESC_HAVE_CLI

#include <gtest/gtest.h>

#include <filesystem>

#include "cli.hpp"
#include "test_util.hpp"

using namespace esc;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> with_dirs(std::vector<std::string> args, const fs::path& root) {
  for (const std::string& a : std::vector<std::string>{"--data-root", (root / "data").string(), "--ckpt-dir", (root / "ck").string(), "--out",
                               (root / "out").string(), "--log-level", "off"}) {
    args.push_back(a);
  }
  return args;
}

const std::string kSmoke = ESC_SOURCE_DIR "/configs/smoke.toml";

}  // namespace

TEST(Cli, UsageErrorsExitWithOne) {
  EXPECT_EQ(cli::run({}), cli::kExitUsage);
  EXPECT_EQ(cli::run({"frobnicate"}), cli::kExitUsage);
  EXPECT_EQ(cli::run({"train", "--no-such-flag"}), cli::kExitUsage);
  EXPECT_EQ(cli::run({"gen-data", "-c", "/nonexistent.toml", "--log-level", "off"}), cli::kExitUsage);
  EXPECT_EQ(cli::run({"gen-data", "-c", kSmoke, "--set", "paper.nope=1", "--log-level", "off"}), cli::kExitUsage);
  EXPECT_EQ(cli::run({"--help"}), cli::kExitOk);
}

TEST(Cli, RuntimeFailuresExitWithTwo) {
  test::TempDir dir("cli_rt");
  // No data generated yet.
  EXPECT_EQ(cli::run(with_dirs({"train-dict", "-c", kSmoke}, dir.path())), cli::kExitRuntime);
  EXPECT_EQ(cli::run(with_dirs({"eval", "-c", kSmoke}, dir.path())), cli::kExitRuntime);
}

TEST(Cli, GenDataThenStatsSucceed) {
  test::TempDir dir("cli_ok");
  EXPECT_EQ(cli::run(with_dirs({"gen-data", "-c", kSmoke}, dir.path())), cli::kExitOk);
  EXPECT_TRUE(fs::exists(dir.path() / "data" / "config.json"));
  EXPECT_TRUE(fs::exists(dir.path() / "data" / "train"));
  EXPECT_EQ(cli::run(with_dirs({"stats-edge", "-c", kSmoke, "--scenes", "3"}, dir.path())), cli::kExitOk);
  EXPECT_TRUE(fs::exists(dir.path() / "out" / "edge_stats.json"));
}

#endif
