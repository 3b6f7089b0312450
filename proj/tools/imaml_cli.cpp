// imaml: command-line entry point for meta-training, meta-gradient
// comparison sweeps, oracle verification and evaluation.
//
//   imaml train --config configs/train_quadratic.json --out runs/a
//   imaml validate --config configs/train_quadratic.json
//
// Exit status: 0 on success, 2 when the config fails validation, 1 on any
// runtime failure (including a failed oracle check). Errors are reported on
// stderr as a single JSON object.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "imaml/config.hpp"
#include "imaml/errors.hpp"
#include "imaml/experiments.hpp"

namespace {

using nlohmann::json;

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> workers;
  std::string format = "json";
  std::optional<std::string> resume;
  std::optional<std::string> checkpoint;
  bool schema = false;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "JSON config file (defaults only when omitted)");
  cmd->add_option("--seed", f.seed, "Master seed");
  cmd->add_option("--out", f.out, "Output directory");
  cmd->add_option("--workers", f.workers, "Worker threads (1 = serial)")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--format", f.format, "What to print on stdout")
      ->check(CLI::IsMember({"csv", "json"}));
}

imaml::ExperimentConfig resolve(const Flags& f, const std::optional<std::string>& kind) {
  imaml::CliOverrides cli;
  cli.seed = f.seed;
  cli.output_dir = f.out;
  cli.workers = f.workers;
  cli.experiment = kind;
  cli.eval_checkpoint = f.checkpoint;
  if (f.config.empty()) {
    return imaml::resolve_config(json::object(), imaml::environment_overrides(), cli);
  }
  return imaml::load_config(f.config, cli);
}

// "method.lambda" -> "/method/lambda".
json::json_pointer pointer(std::string dotted) {
  for (char& ch : dotted) {
    if (ch == '.') ch = '/';
  }
  return json::json_pointer("/" + dotted);
}

void print_validate(const imaml::ExperimentConfig& c, const std::string& format) {
  if (format == "json") {
    std::cout << imaml::resolved_document(c).dump(2) << "\n";
    return;
  }
  std::cout << "# config_hash=" << c.hash << " seed=" << c.seed << "\n";
  std::cout << "key,value,provenance\n";
  for (const auto& [path, origin] : c.provenance) {
    const json& v = c.resolved.at(pointer(path));
    std::string text = v.is_string() ? v.get<std::string>() : v.dump();
    if (text.find(',') != std::string::npos || text.find('"') != std::string::npos) {
      std::string quoted = "\"";
      for (char ch : text) {
        if (ch == '"') quoted += '"';
        quoted += ch;
      }
      text = quoted + "\"";
    }
    std::cout << path << "," << text << "," << imaml::to_string(origin) << "\n";
  }
}

void report_error(const std::string& kind, const std::string& message,
                  const std::string& path = {}) {
  json err = {{"error", kind}, {"message", message}};
  if (!path.empty()) err["path"] = path;
  std::cerr << err.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Implicit and path-differentiated meta-gradients"};
  app.require_subcommand(1);

  Flags f;
  CLI::App* train = app.add_subcommand("train", "Meta-train and write metrics and a checkpoint");
  add_common(train, f);
  train->add_option("--resume", f.resume, "Checkpoint to continue from");

  CLI::App* compare = app.add_subcommand("compare-metagrad",
                                         "Sweep meta-gradient methods against the exact oracle");
  add_common(compare, f);

  CLI::App* verify = app.add_subcommand("verify-oracle", "Run the oracle identity suite");
  add_common(verify, f);

  CLI::App* eval = app.add_subcommand("eval", "Score a checkpoint on held-out tasks");
  add_common(eval, f);
  eval->add_option("--checkpoint", f.checkpoint, "Checkpoint to evaluate");

  CLI::App* validate = app.add_subcommand("validate",
                                          "Print the resolved config with provenance");
  add_common(validate, f);
  validate->add_flag("--schema", f.schema, "Print the config schema instead");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    report_error("usage", e.what());
    return 2;
  }

  std::optional<std::string> kind;
  if (train->parsed()) kind = "train";
  if (compare->parsed()) kind = "compare-metagrad";
  if (verify->parsed()) kind = "verify-oracle";
  if (eval->parsed()) kind = "eval";

  try {
    if (validate->parsed()) {
      if (f.schema) {
        std::cout << imaml::config_schema().dump(2) << "\n";
        return 0;
      }
      print_validate(resolve(f, std::nullopt), f.format);
      return 0;
    }

    const imaml::ExperimentConfig c = resolve(f, kind);
    const imaml::RunOutput out = imaml::run_experiment(c, f.resume);
    if (f.format == "csv") {
      std::cout << out.table_csv;
    } else {
      std::cout << out.summary.dump(2) << "\n";
    }
    if (out.failures > 0) {
      report_error("verification_failed",
                   std::to_string(out.failures) + " oracle check(s) failed");
      return 1;
    }
    return 0;
  } catch (const imaml::ValidationError& e) {
    report_error("validation", e.what(), e.path());
    return 2;
  } catch (const imaml::Error& e) {
    report_error("runtime", e.what());
    return 1;
  } catch (const std::exception& e) {
    report_error("runtime", e.what());
    return 1;
  }
}
