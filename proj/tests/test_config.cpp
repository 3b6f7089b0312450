#include <string>

#include <gtest/gtest.h>

#include "imaml/config.hpp"
#include "imaml/errors.hpp"

namespace {

using namespace imaml;
using nlohmann::json;

std::string rejected_path(const json& doc, const std::map<std::string, std::string>& env = {}) {
  try {
    resolve_config(doc, env);
  } catch (const ValidationError& e) {
    return e.path();
  }
  return "<accepted>";
}

TEST(Config, MissingLambdaResolvesToPaperDefault) {
  const ExperimentConfig c = resolve_config(json::object());
  EXPECT_EQ(c.engine.lambda, 2.0);
  EXPECT_EQ(c.provenance.at("method.lambda"), Provenance::kPaperDefault);
  EXPECT_EQ(c.engine.cg.max_iters, 5);
  EXPECT_EQ(c.provenance.at("method.cg_steps"), Provenance::kPaperDefault);
  EXPECT_EQ(to_string(Provenance::kPaperDefault), "paper-default");
}

TEST(Config, UserValuesAreTagged) {
  const ExperimentConfig c = resolve_config({{"method", {{"lambda", 0.7}}}});
  EXPECT_EQ(c.engine.lambda, 0.7);
  EXPECT_EQ(c.provenance.at("method.lambda"), Provenance::kUser);
  EXPECT_EQ(c.provenance.at("outer.lr"), Provenance::kArtifactDefault);
}

TEST(Config, NegativeLambdaIsRejected) {
  EXPECT_EQ(rejected_path({{"method", {{"lambda", -1.0}}}}), "method.lambda");
}

TEST(Config, UnknownKeysAreRejectedWithPath) {
  EXPECT_EQ(rejected_path({{"method", {{"lamda", 1.0}}}}), "method.lamda");
  EXPECT_EQ(rejected_path({{"bogus", 1}}), "bogus");
}

TEST(Config, WrongTypesAreRejectedWithPath) {
  EXPECT_EQ(rejected_path({{"outer", {{"iterations", "many"}}}}), "outer.iterations");
  EXPECT_EQ(rejected_path({{"method", {{"engine", "sgd"}}}}), "method.engine");
}

TEST(Config, HardPresetUsesToyOperatingPoint) {
  const ExperimentConfig c = resolve_config({{"preset", "hard"}});
  EXPECT_EQ(c.engine.lambda, 0.5);
  EXPECT_EQ(c.engine.inner.steps, 10);
  EXPECT_EQ(c.provenance.at("method.lambda"), Provenance::kPaperDefault);
}

TEST(Config, EnvironmentOverridesFileAndCliOverridesBoth) {
  const json doc = {{"seed", 1}, {"method", {{"lambda", 3.0}}}};
  const std::map<std::string, std::string> env = {{"IMAML_METHOD__LAMBDA", "4.5"},
                                                  {"IMAML_SEED", "2"},
                                                  {"PATH", "/usr/bin"}};
  CliOverrides cli;
  cli.seed = 3;
  const ExperimentConfig c = resolve_config(doc, env, cli);
  EXPECT_EQ(c.engine.lambda, 4.5);
  EXPECT_EQ(c.provenance.at("method.lambda"), Provenance::kEnv);
  EXPECT_EQ(c.seed, 3u);
  EXPECT_EQ(c.provenance.at("seed"), Provenance::kCli);
}

TEST(Config, UnknownEnvironmentKeyIsRejected) {
  EXPECT_EQ(rejected_path(json::object(), {{"IMAML_METHOD__LAMDA", "1"}}), "method.lamda");
}

TEST(Config, QuadraticDefaultsDeriveSolverConstants) {
  const ExperimentConfig c =
      resolve_config({{"tasks", {{"kind", "quadratic"}, {"kappa", 10.0}}}});
  EXPECT_EQ(c.model.kind, ModelKind::kQuadratic);
  ASSERT_TRUE(c.engine.inner.mu.has_value());
  EXPECT_DOUBLE_EQ(*c.engine.inner.mu, 3.0);
  EXPECT_DOUBLE_EQ(*c.engine.inner.beta, 12.0);
  EXPECT_DOUBLE_EQ(c.engine.inner.lr, 2.0 / 15.0);
}

TEST(Config, HashIgnoresPlumbingButNotPhysics) {
  const ExperimentConfig base = resolve_config(json::object());
  const ExperimentConfig moved =
      resolve_config({{"output_dir", "elsewhere"}, {"workers", 4}, {"experiment", "eval"}});
  const ExperimentConfig changed = resolve_config({{"method", {{"lambda", 3.0}}}});
  EXPECT_EQ(base.hash, moved.hash);
  EXPECT_NE(base.hash, changed.hash);
  EXPECT_EQ(base.hash.size(), 16u);
  EXPECT_EQ(fnv1a_hex(""), "cbf29ce484222325");
}

TEST(Config, ResolvedDocumentListsEveryKey) {
  const ExperimentConfig c = resolve_config(json::object());
  const json doc = resolved_document(c);
  const json schema = config_schema();
  for (const auto& entry : schema) {
    const std::string key = entry.at("key");
    EXPECT_TRUE(doc.at("provenance").contains(key)) << key;
  }
  EXPECT_EQ(doc.at("config_hash"), c.hash);
}

TEST(Config, EvalOverridesAdaptation) {
  const ExperimentConfig c =
      resolve_config({{"method", {{"inner_steps", 100}}}, {"eval", {{"inner_steps", 10}}}});
  EXPECT_EQ(c.engine.inner.steps, 100);
  EXPECT_EQ(c.eval_inner.steps, 10);
}

TEST(Config, ExperimentKindsRoundTrip) {
  for (const char* k : {"train", "compare-metagrad", "verify-oracle", "eval"}) {
    EXPECT_EQ(to_string(experiment_kind_from_string(k)), k);
  }
}

}  // namespace
