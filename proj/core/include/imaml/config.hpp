#pragma once

// Experiment configuration: a JSON document checked against a fixed schema,
// merged with environment overrides and command-line flags, with every
// resolved field tagged by where its value came from.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "imaml/meta_gradient.hpp"
#include "imaml/meta_trainer.hpp"
#include "imaml/models.hpp"
#include "imaml/tasks.hpp"
#include "imaml/telemetry.hpp"

namespace imaml {

enum class Provenance { kPaperDefault, kArtifactDefault, kUser, kEnv, kCli };

std::string to_string(Provenance p);

enum class ExperimentKind { kTrain, kCompare, kVerify, kEval };

std::string to_string(ExperimentKind k);
ExperimentKind experiment_kind_from_string(const std::string& s);

// Prefix of environment overrides. IMAML_METHOD__LAMBDA=0.5 sets
// method.lambda: strip the prefix, lowercase, "__" separates sections.
inline constexpr const char* kEnvPrefix = "IMAML_";

struct CliOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output_dir;
  std::optional<int> workers;
  std::optional<std::string> experiment;
  std::optional<std::string> eval_checkpoint;
};

struct ExperimentConfig {
  ExperimentKind experiment = ExperimentKind::kTrain;
  std::uint64_t seed = 0;
  std::string output_dir;
  std::vector<std::string> report_formats;
  int workers = 1;

  TaskDistribution tasks;
  std::size_t meta_train_tasks = 0;
  std::size_t meta_test_tasks = 0;
  Model model;
  EngineSpec engine;
  OuterOptions outer;

  SweepGrid compare_grid;
  std::size_t compare_tasks = 0;

  std::size_t verify_tasks = 0;
  Index verify_dim = 0;
  double verify_fd_step = 0.0;

  std::optional<std::string> eval_checkpoint;
  // Adaptation used by eval: the method's inner budget with the eval
  // section's overrides applied.
  InnerBudget eval_inner;

  // Fully resolved document (every schema key present) and the origin of
  // each dotted key.
  nlohmann::json resolved;
  std::map<std::string, Provenance> provenance;
  // FNV-1a 64 of the canonical resolved document without the fields that
  // cannot change a trained model: output_dir, workers, report_formats,
  // experiment and the eval section.
  std::string hash;
};

// Resolves a user document. `env` maps variable names to values (only
// those starting with kEnvPrefix are considered). Throws ValidationError
// carrying the dotted key path of the first problem.
ExperimentConfig resolve_config(const nlohmann::json& user,
                                const std::map<std::string, std::string>& env = {},
                                const CliOverrides& cli = {});

// Reads a JSON file and resolves it against the process environment.
ExperimentConfig load_config(const std::string& path, const CliOverrides& cli = {});

std::map<std::string, std::string> environment_overrides();

// The published schema: one entry per key with type, default, origin of
// the default and a description.
nlohmann::json config_schema();

// {"config", "provenance", "config_hash", "seed"}.
nlohmann::json resolved_document(const ExperimentConfig& c);

std::string fnv1a_hex(const std::string& bytes);

// Trainer settings implied by the config.
TrainerConfig trainer_config(const ExperimentConfig& c);

}  // namespace imaml
