// Runs the imaml executable end to end.

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Result {
  int status = -1;
  std::string out;
};

Result run(const std::string& args) {
  const std::string cmd = std::string(IMAML_CLI_PATH) + " " + args;
  Result r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (pipe == nullptr) return r;
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
  const int raw = pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("imaml_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

fs::path write_config(const fs::path& dir, const json& doc) {
  const fs::path p = dir / "config.json";
  std::ofstream(p) << doc.dump();
  return p;
}

const json kSmallTrain = {
    {"experiment", "train"},
    {"seed", 5},
    {"tasks", {{"kind", "quadratic"}, {"dim", 5}, {"kappa", 5.0}, {"meta_train_tasks", 6}}},
    {"method", {{"inner_steps", 10}}},
    {"outer", {{"iterations", 6}, {"batch_size", 3}}}};

TEST(Cli, VerifyOracleDefaultsPass) {
  const fs::path dir = scratch("verify");
  const Result r = run("verify-oracle --out " + dir.string() + " 2>/dev/null");
  EXPECT_EQ(r.status, 0);
  const json summary = json::parse(r.out);
  EXPECT_EQ(summary.at("failures"), 0);
  for (const char* f : {"metrics.csv", "results.json", "config.resolved.json"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
}

TEST(Cli, CompareRowCountEqualsGrid) {
  const fs::path dir = scratch("compare");
  const fs::path cfg =
      write_config(dir, {{"tasks", {{"dim", 8}, {"kappa", 10.0}}},
                         {"compare", {{"inner_steps", {2, 4, 8}}, {"cg_steps", {0, 5}}, {"tasks", 2}}}});
  const Result r = run("compare-metagrad --config " + cfg.string() + " --out " +
                    (dir / "out").string() + " --format csv");
  ASSERT_EQ(r.status, 0);
  std::istringstream lines(r.out);
  std::string line;
  int rows = 0;
  while (std::getline(lines, line)) {
    if (!line.empty() && line[0] != '#' && line.rfind("method,", 0) != 0) ++rows;
  }
  EXPECT_EQ(rows, 3 * (2 + 3));
  EXPECT_EQ(slurp(dir / "out" / "metrics.csv"), r.out);
}

TEST(Cli, TrainTwiceGivesIdenticalMetrics) {
  const fs::path dir = scratch("train");
  const fs::path cfg = write_config(dir, kSmallTrain);
  ASSERT_EQ(run("train --config " + cfg.string() + " --out " + (dir / "a").string()).status, 0);
  ASSERT_EQ(run("train --config " + cfg.string() + " --out " + (dir / "b").string()).status, 0);
  const std::string a = slurp(dir / "a" / "metrics.csv");
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, slurp(dir / "b" / "metrics.csv"));
  EXPECT_EQ(slurp(dir / "a" / "checkpoint.bin"), slurp(dir / "b" / "checkpoint.bin"));
  EXPECT_EQ(a.rfind("# config_hash=", 0), 0u);
}

TEST(Cli, ResumeAppendsToTheSameTrajectory) {
  const fs::path dir = scratch("resume");
  json shorter = kSmallTrain;
  shorter["outer"]["iterations"] = 3;
  const fs::path full_cfg = write_config(dir, kSmallTrain);
  ASSERT_EQ(run("train --config " + full_cfg.string() + " --out " + (dir / "full").string()).status, 0);
  const fs::path part_dir = dir / "part";
  fs::create_directories(part_dir);
  std::ofstream(part_dir / "short.json") << shorter.dump();
  ASSERT_EQ(run("train --config " + (part_dir / "short.json").string() + " --out " +
                (dir / "resumed").string()).status, 0);
  // The shorter run differs only in the iteration budget; resuming under the
  // full config continues the same trajectory.
  ASSERT_EQ(run("train --config " + full_cfg.string() + " --out " + (dir / "resumed").string() +
                " --resume " + (dir / "resumed" / "checkpoint.bin").string() + " 2>/dev/null").status,
            0);
  auto body = [](const std::string& csv) { return csv.substr(csv.find('\n') + 1); };
  EXPECT_EQ(body(slurp(dir / "resumed" / "metrics.csv")), body(slurp(dir / "full" / "metrics.csv")));
  EXPECT_EQ(slurp(dir / "resumed" / "checkpoint.bin"), slurp(dir / "full" / "checkpoint.bin"));
}

TEST(Cli, ValidateShowsProvenance) {
  const Result r = run("validate");
  ASSERT_EQ(r.status, 0);
  const json doc = json::parse(r.out);
  EXPECT_EQ(doc.at("config").at("method").at("lambda"), 2.0);
  EXPECT_EQ(doc.at("provenance").at("method.lambda"), "paper-default");
}

TEST(Cli, ValidationErrorsExitTwoWithJson) {
  const fs::path dir = scratch("invalid");
  const fs::path cfg = write_config(dir, {{"method", {{"lambda", -1}}}});
  const Result r = run("validate --config " + cfg.string() + " 2>&1 >/dev/null");
  EXPECT_EQ(r.status, 2);
  const json err = json::parse(r.out);
  EXPECT_EQ(err.at("error"), "validation");
  EXPECT_EQ(err.at("path"), "method.lambda");

  const fs::path unknown = write_config(dir, {{"outer", {{"iters", 3}}}});
  const Result u = run("train --config " + unknown.string() + " 2>&1 >/dev/null");
  EXPECT_EQ(u.status, 2);
  EXPECT_EQ(json::parse(u.out).at("path"), "outer.iters");
}

TEST(Cli, RuntimeErrorsExitOne) {
  const Result r = run("eval --checkpoint /nonexistent/ckpt.bin --out " +
                    scratch("runtime").string() + " 2>&1 >/dev/null");
  EXPECT_EQ(r.status, 1);
  EXPECT_EQ(json::parse(r.out).at("error"), "runtime");
}

TEST(Cli, EnvironmentOverridesConfig) {
  const Result e = run("validate");
  const std::string cmd = "env IMAML_METHOD__LAMBDA=0.25 ";
  FILE* pipe = popen((cmd + IMAML_CLI_PATH + " validate").c_str(), "r");
  ASSERT_NE(pipe, nullptr);
  std::string out;
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) out.append(buf.data(), n);
  EXPECT_EQ(pclose(pipe), 0);
  const json doc = json::parse(out);
  EXPECT_EQ(doc.at("config").at("method").at("lambda"), 0.25);
  EXPECT_EQ(doc.at("provenance").at("method.lambda"), "env");
  EXPECT_NE(json::parse(e.out).at("config_hash"), doc.at("config_hash"));
}

}  // namespace
