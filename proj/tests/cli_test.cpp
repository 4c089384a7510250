#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;

namespace {

const fs::path kBinary = COMPACT_PLACE_CLI;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("compact_place_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + (env.empty() ? "" : " ") + kBinary.string() + " " + args +
                          " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string run_stderr(const std::string& args, const fs::path& dir) {
  const fs::path err = dir / "stderr.txt";
  [[maybe_unused]] const int status =
      std::system((kBinary.string() + " " + args + " >/dev/null 2>" + err.string()).c_str());
  return slurp(err);
}

void expect_same_tree(const fs::path& a, const fs::path& b) {
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), a);
    EXPECT_EQ(slurp(e.path()), slurp(b / rel)) << rel;
    ++files;
  }
  EXPECT_GT(files, 0u);
}

}  // namespace

TEST(Cli, GenIsDeterministicAndWritesManifest) {
  const fs::path d = scratch("gen");
  ASSERT_EQ(run("gen --seed 11 --n 3 --out " + (d / "a").string()), 0);
  ASSERT_EQ(run("gen --seed 11 --n 3 --out " + (d / "b").string()), 0);
  expect_same_tree(d / "a", d / "b");
  const auto m = nlohmann::json::parse(slurp(d / "a" / "manifest.json"));
  EXPECT_EQ(m["layouts"].size(), 3u);
  EXPECT_TRUE(fs::exists(d / "a" / "effective_config.json"));
}

TEST(Cli, GenZeroLayouts) {
  const fs::path d = scratch("gen0");
  ASSERT_EQ(run("gen --seed 1 --n 0 --out " + d.string()), 0);
  const auto m = nlohmann::json::parse(slurp(d / "manifest.json"));
  EXPECT_TRUE(m["layouts"].empty());
}

TEST(Cli, UsageErrorsExitOne) {
  const fs::path d = scratch("usage");
  EXPECT_EQ(run(""), 1);
  EXPECT_EQ(run("frobnicate"), 1);
  EXPECT_EQ(run("gen --n 2 --out " + d.string()), 1);  // missing seed
  EXPECT_EQ(run("gen --seed x --out " + d.string()), 1);
  EXPECT_EQ(run("baseline BL3 --layouts " + d.string() + " --out " + d.string()), 1);
  EXPECT_EQ(run("--help"), 0);
}

TEST(Cli, InvalidConfigFieldIsNamed) {
  const fs::path d = scratch("config");
  std::ofstream(d / "c.json") << R"({"env": {"max_steps": -4}})";
  ASSERT_EQ(run("gen --seed 1 --n 1 --out " + (d / "l").string()), 0);
  const std::string args = "eval --agent oracle --seed 1 --layouts " + (d / "l").string() +
                           " --out " + (d / "e").string() + " --config " +
                           (d / "c.json").string();
  EXPECT_EQ(run(args), 1);
  EXPECT_NE(run_stderr(args, d).find("max_steps"), std::string::npos);
  std::ofstream(d / "u.json") << R"({"baseline": {"delta": 3}})";
  const std::string unknown = "baseline BL1 --layouts " + (d / "l").string() + " --out " +
                              (d / "b").string() + " --config " + (d / "u.json").string();
  EXPECT_EQ(run(unknown), 1);
  EXPECT_NE(run_stderr(unknown, d).find("baseline.delta"), std::string::npos);
}

TEST(Cli, DataErrorsExitTwo) {
  const fs::path d = scratch("data");
  EXPECT_EQ(run("eval --agent BL1 --seed 1 --layouts " + (d / "none").string() +
                " --out " + (d / "e").string()),
            2);
  std::ofstream(d / "layout_0000.json") << "{not json";
  EXPECT_EQ(run("eval --agent BL1 --seed 1 --layouts " + d.string() + " --out " +
                (d / "e").string()),
            2);
}

TEST(Cli, UnwritableOutputIsRuntimeError) {
  const fs::path d = scratch("unwritable");
  ASSERT_EQ(run("gen --seed 1 --n 1 --out " + (d / "l").string()), 0);
  std::ofstream(d / "blocker") << "x";
  EXPECT_EQ(run("eval --agent oracle --seed 1 --layouts " + (d / "l").string() +
                " --out " + (d / "blocker" / "sub").string()),
            3);
}

TEST(Cli, BadThreadCountIsUsageError) {
  const fs::path d = scratch("threads");
  ASSERT_EQ(run("gen --seed 1 --n 1 --out " + (d / "l").string()), 0);
  const std::string args = "eval --agent oracle --seed 1 --layouts " + (d / "l").string() +
                           " --out " + (d / "e").string();
  EXPECT_EQ(run(args, "COMPACT_PLACE_THREADS=0"), 1);
  EXPECT_EQ(run(args, "COMPACT_PLACE_THREADS=2"), 0);
}

TEST(Cli, PipelineIsByteDeterministic) {
  const fs::path d = scratch("pipeline");
  const std::string l = (d / "l").string();
  ASSERT_EQ(run("gen --seed 5 --n 2 --out " + l), 0);
  // Small warmup and batch so the run includes gradient updates and an eval.
  std::ofstream(d / "c.json")
      << R"({"train": {"warmup_steps": 100, "batch_size": 16, "eval_every": 200, "eval_episodes": 2}})";
  const std::string cfg = " --config " + (d / "c.json").string();
  for (const char* run_dir : {"r1", "r2"}) {
    const fs::path r = d / run_dir;
    ASSERT_EQ(run("train --seed 3 --steps 400 --layouts " + l + cfg + " --out " + (r / "t").string()), 0);
    ASSERT_EQ(run("baseline BL2 --seed 4 --layouts " + l + " --out " + (r / "b").string()), 0);
    ASSERT_EQ(run("eval --agent BL1 --seed 4 --layouts " + l + " --out " + (r / "e1").string()), 0);
    ASSERT_EQ(run("eval --checkpoint " + (r / "t" / "final.ckpt").string() +
                  " --seed 4 --layouts " + l + " --out " + (r / "e2").string()),
              0);
    ASSERT_EQ(run("render " + (r / "e1" / "assemblies" / "layout_0000.json").string() +
                  " --layouts " + l + " --footprints --out " + (r / "a.svg").string()),
              0);
  }
  // Checkpoint paths are echoed into the eval config; compare everything else.
  fs::remove(d / "r1" / "e2" / "effective_config.json");
  fs::remove(d / "r2" / "e2" / "effective_config.json");
  expect_same_tree(d / "r1", d / "r2");
  EXPECT_EQ(slurp(d / "r1" / "e1" / "report.csv").rfind("layout_id,agent,", 0), 0u);
}

TEST(Cli, ResumeContinuesStepCount) {
  const fs::path d = scratch("resume");
  const std::string l = (d / "l").string();
  ASSERT_EQ(run("gen --seed 5 --n 1 --out " + l), 0);
  ASSERT_EQ(run("train --seed 3 --steps 200 --layouts " + l + " --out " + (d / "a").string()), 0);
  ASSERT_EQ(run("train --seed 3 --steps 100 --layouts " + l + " --checkpoint " +
                (d / "a" / "final.ckpt").string() + " --out " + (d / "b").string()),
            0);
  const std::string log = slurp(d / "b" / "train_log.csv");
  // Every logged step of the resumed run lies after the first run's 200.
  std::istringstream rows(log);
  std::string row;
  std::getline(rows, row);
  int n = 0;
  while (std::getline(rows, row)) {
    EXPECT_GT(std::stoll(row.substr(0, row.find(','))), 200) << row;
    ++n;
  }
  EXPECT_GT(n, 0);
}
