#pragma once

// Experiment runners behind the command-line tool. Each runner writes its
// files into the configured output directory and returns a summary.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "imaml/config.hpp"

namespace imaml {

// Seed streams shared by the runners: the meta-test tasks never overlap the
// meta-train pool or the fresh training batches.
inline constexpr std::uint64_t kMetaTestStream = 0x54455354ULL;
inline constexpr std::uint64_t kCompareStream = 0x434D5052ULL;
inline constexpr std::uint64_t kVerifyStream = 0x56455246ULL;

struct RunOutput {
  nlohmann::json summary;  // also written to results.json
  std::string table_csv;   // also written to metrics.csv
  int failures = 0;        // verify-oracle: failed checks
};

struct OracleCheck {
  std::string name;
  bool passed = false;
  double measured = 0.0;   // worst value over the checked tasks
  double tolerance = 0.0;
};

// Oracle identities on seeded quadratic tasks of dimension `dim`: inner
// stationarity, the implicit-Jacobian identity against the closed form and
// against perturb-and-resolve, closed form against finite differences,
// FOMAML against iMAML at zero CG steps, the proximal-point identity and the
// error bound of the implicit gradient.
std::vector<OracleCheck> verify_oracle_suite(const ExperimentConfig& c);

// Writes config.resolved.json, metrics.csv, checkpoint.bin, results.json.
// `resume` continues from a checkpoint and appends to an existing
// metrics.csv in the output directory.
RunOutput run_train(const ExperimentConfig& c,
                    const std::optional<std::string>& resume = {});
RunOutput run_compare(const ExperimentConfig& c);
RunOutput run_verify_oracle(const ExperimentConfig& c);
RunOutput run_eval(const ExperimentConfig& c);

RunOutput run_experiment(const ExperimentConfig& c,
                         const std::optional<std::string>& resume = {});

}  // namespace imaml
