#include "imaml/config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "imaml/errors.hpp"

extern char** environ;

namespace imaml {

std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::kPaperDefault: return "paper-default";
    case Provenance::kArtifactDefault: return "artifact-default";
    case Provenance::kUser: return "user";
    case Provenance::kEnv: return "env";
    case Provenance::kCli: return "cli";
  }
  return "?";
}

std::string to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::kTrain: return "train";
    case ExperimentKind::kCompare: return "compare-metagrad";
    case ExperimentKind::kVerify: return "verify-oracle";
    case ExperimentKind::kEval: return "eval";
  }
  return "?";
}

ExperimentKind experiment_kind_from_string(const std::string& s) {
  if (s == "train") return ExperimentKind::kTrain;
  if (s == "compare-metagrad") return ExperimentKind::kCompare;
  if (s == "verify-oracle") return ExperimentKind::kVerify;
  if (s == "eval") return ExperimentKind::kEval;
  throw ConfigError("unsupported experiment '" + s + "'");
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

using nlohmann::json;

enum class Type { kInt, kUint, kNumber, kBool, kString, kEnum, kIntList, kEnumList };

struct Field {
  const char* path;
  Type type;
  json def;  // null: resolved from other fields, or unset when nullable
  Provenance origin;
  bool nullable;
  std::vector<std::string> choices;
  const char* doc;
};

constexpr Provenance kPaper = Provenance::kPaperDefault;
constexpr Provenance kArtifact = Provenance::kArtifactDefault;

const std::vector<Field>& schema() {
  static const std::vector<Field> fields = {
      {"experiment", Type::kEnum, "train", kArtifact, false,
       {"train", "compare-metagrad", "verify-oracle", "eval"}, "experiment to run"},
      {"preset", Type::kEnum, "standard", kArtifact, false, {"standard", "hard"},
       "hard: lambda 0.5 with 10 inner gradient steps"},
      {"seed", Type::kUint, 0, kArtifact, false, {}, "master seed"},
      {"output_dir", Type::kString, "out", kArtifact, false, {}, "directory for output files"},
      {"report_formats", Type::kEnumList, json::array({"csv", "json"}), kArtifact, false,
       {"csv", "json"}, "file formats written next to config.resolved.json"},
      {"workers", Type::kInt, 1, kArtifact, false, {}, "threads for per-task work"},

      {"tasks.kind", Type::kEnum, "quadratic", kArtifact, false,
       {"quadratic", "sinusoid", "gaussian-classes"}, "task family"},
      {"tasks.dim", Type::kInt, 50, kPaper, false, {},
       "quadratic parameter dimension / classification input dimension"},
      {"tasks.kappa", Type::kNumber, 50.0, kPaper, false, {}, "condition number of A"},
      {"tasks.spectrum", Type::kEnum, "clustered", kArtifact, false,
       {"clustered", "log-uniform"}, "eigenvalue layout of A on [1, kappa]"},
      {"tasks.spectrum_levels", Type::kInt, 5, kArtifact, false, {},
       "number of eigenvalue levels for the clustered spectrum"},
      {"tasks.ways", Type::kInt, 5, kArtifact, false, {}, "classes per classification task"},
      {"tasks.shots", Type::kInt, 10, kArtifact, false, {},
       "train examples (per class for classification)"},
      {"tasks.test_shots", Type::kInt, 10, kArtifact, false, {},
       "test examples (per class for classification)"},
      {"tasks.meta_train_tasks", Type::kUint, 0, kArtifact, false, {},
       "fixed meta-train pool size; 0 draws fresh tasks every step"},
      {"tasks.meta_test_tasks", Type::kUint, 20, kArtifact, false, {},
       "tasks used by eval"},
      {"tasks.base_seed", Type::kUint, 0, kArtifact, false, {}, "task-stream seed"},

      {"model.kind", Type::kEnum, nullptr, kArtifact, true, {"linear", "mlp", "quadratic"},
       "model; defaults to quadratic for quadratic tasks and mlp otherwise"},
      {"model.hidden", Type::kIntList, json::array({40, 40}), kArtifact, false, {},
       "MLP hidden widths"},
      {"model.activation", Type::kEnum, "tanh", kArtifact, false, {"tanh", "relu"},
       "MLP activation"},
      {"model.loss", Type::kEnum, nullptr, kArtifact, true,
       {"squared-error", "cross-entropy"},
       "loss; defaults to cross-entropy for classification"},

      {"method.engine", Type::kEnum, "imaml", kArtifact, false,
       {"imaml", "maml", "fomaml", "reptile"}, "meta-gradient engine"},
      {"method.lambda", Type::kNumber, 2.0, kPaper, false, {},
       "proximal regularization strength"},
      {"method.inner_solver", Type::kEnum, "gd", kArtifact, false,
       {"gd", "agd", "newton-cg"}, "inner solver"},
      {"method.inner_steps", Type::kInt, 16, kPaper, false, {}, "gd / agd iterations"},
      {"method.inner_lr", Type::kNumber, nullptr, kArtifact, true, {},
       "gd step size (MAML alpha); quadratic tasks default to 2 / (mu + beta), "
       "others to 0.01"},
      {"method.cg_steps", Type::kInt, 5, kPaper, false, {},
       "CG iterations for the implicit meta-gradient"},
      {"method.cg_tol", Type::kNumber, 1e-10, kArtifact, false, {}, "CG residual tolerance"},
      {"method.cg_on_negative_curvature", Type::kEnum, "error", kArtifact, false,
       {"error", "truncate"},
       "error: fail the step; truncate: keep the CG iterate built so far"},
      {"method.newton_cg_steps", Type::kInt, 5, kPaper, false, {},
       "CG iterations per Newton direction"},
      {"method.newton_reps", Type::kInt, 3, kPaper, false, {}, "Newton-CG rounds"},
      {"method.target_delta", Type::kNumber, nullptr, kArtifact, true, {},
       "stop the inner solver once ||grad G|| / mu <= delta"},
      {"method.mu", Type::kNumber, nullptr, kArtifact, true, {},
       "strong convexity of G (quadratic tasks: lambda + 1)"},
      {"method.beta", Type::kNumber, nullptr, kArtifact, true, {},
       "smoothness of G (quadratic tasks: lambda + kappa)"},

      {"outer.optimizer", Type::kEnum, "sgd", kArtifact, false, {"sgd", "adam"},
       "outer optimizer"},
      {"outer.lr", Type::kNumber, 0.1, kArtifact, false, {}, "outer step size eta"},
      {"outer.iterations", Type::kInt, 100, kArtifact, false, {}, "outer steps"},
      {"outer.batch_size", Type::kInt, 4, kArtifact, false, {}, "tasks per outer step"},
      {"outer.grad_tol", Type::kNumber, nullptr, kArtifact, true, {},
       "stop once the averaged meta-gradient norm is below this"},
      {"outer.adam_beta1", Type::kNumber, 0.9, kArtifact, false, {}, "Adam beta1"},
      {"outer.adam_beta2", Type::kNumber, 0.999, kArtifact, false, {}, "Adam beta2"},
      {"outer.adam_eps", Type::kNumber, 1e-8, kArtifact, false, {}, "Adam epsilon"},
      {"outer.record_wall_time", Type::kBool, false, kArtifact, false, {},
       "write wall-clock times into metrics.csv (breaks byte determinism)"},

      {"compare.inner_steps", Type::kIntList, json::array({4, 16, 64, 256}), kArtifact,
       false, {}, "inner step budgets of the sweep"},
      {"compare.cg_steps", Type::kIntList, json::array({0, 1, 2, 5, 10}), kArtifact, false,
       {}, "iMAML CG budgets of the sweep"},
      {"compare.tasks", Type::kUint, 4, kArtifact, false, {}, "tasks averaged per cell"},
      {"compare.maml", Type::kBool, true, kArtifact, false, {}, "include MAML cells"},
      {"compare.fomaml", Type::kBool, true, kArtifact, false, {}, "include FOMAML cells"},
      {"compare.reptile", Type::kBool, true, kArtifact, false, {}, "include Reptile cells"},

      {"verify.tasks", Type::kUint, 20, kArtifact, false, {}, "quadratic tasks checked"},
      {"verify.dim", Type::kInt, 5, kArtifact, false, {}, "dimension of the checked tasks"},
      {"verify.fd_step", Type::kNumber, 1e-5, kArtifact, false, {},
       "central-difference step"},

      {"eval.checkpoint", Type::kString, nullptr, kArtifact, true, {},
       "checkpoint whose theta is evaluated; unset evaluates the initial theta"},
      {"eval.inner_solver", Type::kEnum, nullptr, kArtifact, true,
       {"gd", "agd", "newton-cg"}, "adaptation solver at evaluation (unset: method.inner_solver)"},
      {"eval.inner_steps", Type::kInt, nullptr, kArtifact, true, {},
       "adaptation steps at evaluation (unset: method.inner_steps)"},
      {"eval.inner_lr", Type::kNumber, nullptr, kArtifact, true, {},
       "adaptation step size at evaluation (unset: method.inner_lr)"},
  };
  return fields;
}

const Field* find_field(const std::string& path) {
  for (const Field& f : schema()) {
    if (path == f.path) return &f;
  }
  return nullptr;
}

bool is_section(const std::string& path) {
  static const std::set<std::string> sections = {"tasks", "model", "method", "outer",
                                                 "compare", "verify", "eval"};
  return sections.count(path) > 0;
}

void flatten(const json& obj, const std::string& prefix,
             std::map<std::string, json>& out) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (prefix.empty() && is_section(path)) {
      if (!it.value().is_object()) {
        throw ValidationError("section '" + path + "' must be an object", path);
      }
      flatten(it.value(), path, out);
      continue;
    }
    if (find_field(path) == nullptr) {
      throw ValidationError("unknown configuration key '" + path + "'", path);
    }
    out[path] = it.value();
  }
}

bool is_int(const json& v) { return v.is_number_integer() || v.is_number_unsigned(); }

void check_type(const Field& f, const json& v) {
  const std::string path = f.path;
  if (v.is_null()) {
    if (f.nullable) return;
    throw ValidationError("'" + path + "' must not be null", path);
  }
  auto fail = [&](const char* what) {
    throw ValidationError("'" + path + "' must be " + what + " (got " + v.dump() + ")",
                          path);
  };
  auto check_choice = [&](const json& s) {
    if (!s.is_string()) fail("a string");
    const auto str = s.get<std::string>();
    if (std::find(f.choices.begin(), f.choices.end(), str) == f.choices.end()) {
      std::string all;
      for (const auto& c : f.choices) all += (all.empty() ? "" : ", ") + c;
      throw ValidationError("'" + path + "' must be one of {" + all + "} (got \"" + str +
                                "\")",
                            path);
    }
  };
  switch (f.type) {
    case Type::kInt:
      if (!is_int(v)) fail("an integer");
      break;
    case Type::kUint:
      if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
        fail("a nonnegative integer");
      }
      break;
    case Type::kNumber:
      if (!v.is_number()) fail("a number");
      if (!std::isfinite(v.get<double>())) fail("finite");
      break;
    case Type::kBool:
      if (!v.is_boolean()) fail("a boolean");
      break;
    case Type::kString:
      if (!v.is_string()) fail("a string");
      break;
    case Type::kEnum:
      check_choice(v);
      break;
    case Type::kIntList:
      if (!v.is_array()) fail("a list of integers");
      for (const json& e : v) {
        if (!is_int(e)) fail("a list of integers");
      }
      break;
    case Type::kEnumList:
      if (!v.is_array()) fail("a list of strings");
      for (const json& e : v) check_choice(e);
      break;
  }
}

json parse_env_value(const std::string& raw) {
  try {
    return json::parse(raw);
  } catch (const json::exception&) {
    return raw;
  }
}

std::string env_key_to_path(const std::string& name) {
  std::string key = name.substr(std::string(kEnvPrefix).size());
  std::transform(key.begin(), key.end(), key.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  std::string path;
  for (std::size_t i = 0; i < key.size(); ++i) {
    if (key.compare(i, 2, "__") == 0) {
      path += '.';
      ++i;
    } else {
      path += key[i];
    }
  }
  return path;
}

// Dotted access into the nested resolved document.
json& slot(json& doc, const std::string& path) {
  json* node = &doc;
  std::size_t start = 0;
  for (std::size_t dot = path.find('.'); dot != std::string::npos;
       start = dot + 1, dot = path.find('.', start)) {
    node = &(*node)[path.substr(start, dot - start)];
  }
  return (*node)[path.substr(start)];
}

const json& at(const json& doc, const std::string& path) {
  std::string pointer = "/" + path;
  std::replace(pointer.begin(), pointer.end(), '.', '/');
  return doc.at(json::json_pointer(pointer));
}

template <class T>
T get(const json& doc, const std::string& path) {
  return at(doc, path).get<T>();
}

// Wraps a ConfigError thrown by a struct validator with the section path.
template <class Fn>
void checked(const std::string& path, Fn&& fn) {
  try {
    fn();
  } catch (const ValidationError&) {
    throw;
  } catch (const ConfigError& e) {
    throw ValidationError(e.what(), path);
  }
}

}  // namespace

std::map<std::string, std::string> environment_overrides() {
  std::map<std::string, std::string> out;
  const std::string prefix = kEnvPrefix;
  for (char** e = environ; e != nullptr && *e != nullptr; ++e) {
    const std::string entry = *e;
    if (entry.compare(0, prefix.size(), prefix) != 0) continue;
    const std::size_t eq = entry.find('=');
    if (eq == std::string::npos) continue;
    out[entry.substr(0, eq)] = entry.substr(eq + 1);
  }
  return out;
}

json config_schema() {
  json out = json::array();
  for (const Field& f : schema()) {
    static const char* names[] = {"integer", "unsigned", "number", "boolean",
                                  "string", "enum", "integer-list", "enum-list"};
    json e;
    e["key"] = f.path;
    e["type"] = names[static_cast<int>(f.type)];
    e["default"] = f.def;
    e["default_origin"] = to_string(f.origin);
    e["nullable"] = f.nullable;
    if (!f.choices.empty()) e["choices"] = f.choices;
    e["description"] = f.doc;
    out.push_back(std::move(e));
  }
  return out;
}

ExperimentConfig resolve_config(const json& user,
                                const std::map<std::string, std::string>& env,
                                const CliOverrides& cli) {
  if (!user.is_object()) throw ValidationError("configuration must be a JSON object", "");

  std::map<std::string, json> values;
  std::map<std::string, Provenance> origin;
  for (const Field& f : schema()) {
    values[f.path] = f.def;
    origin[f.path] = f.origin;
  }
  std::map<std::string, json> from_user;
  flatten(user, "", from_user);
  for (auto& [path, v] : from_user) {
    values[path] = v;
    origin[path] = Provenance::kUser;
  }
  const std::string prefix = kEnvPrefix;
  for (const auto& [name, raw] : env) {
    if (name.compare(0, prefix.size(), prefix) != 0) continue;
    const std::string path = env_key_to_path(name);
    if (find_field(path) == nullptr) {
      throw ValidationError("environment variable " + name +
                                " does not name a configuration key",
                            path);
    }
    values[path] = parse_env_value(raw);
    origin[path] = Provenance::kEnv;
  }
  if (cli.seed) {
    values["seed"] = *cli.seed;
    origin["seed"] = Provenance::kCli;
  }
  if (cli.output_dir) {
    values["output_dir"] = *cli.output_dir;
    origin["output_dir"] = Provenance::kCli;
  }
  if (cli.workers) {
    values["workers"] = *cli.workers;
    origin["workers"] = Provenance::kCli;
  }
  if (cli.experiment) {
    values["experiment"] = *cli.experiment;
    origin["experiment"] = Provenance::kCli;
  }
  if (cli.eval_checkpoint) {
    values["eval.checkpoint"] = *cli.eval_checkpoint;
    origin["eval.checkpoint"] = Provenance::kCli;
  }
  for (const Field& f : schema()) check_type(f, values[f.path]);

  auto defaulted = [&](const std::string& path) {
    const Provenance p = origin[path];
    return p == Provenance::kPaperDefault || p == Provenance::kArtifactDefault;
  };
  auto derive = [&](const std::string& path, json v, Provenance p) {
    values[path] = std::move(v);
    origin[path] = p;
  };

  // Preset and derived defaults.
  if (values["preset"] == "hard") {
    if (defaulted("method.lambda")) derive("method.lambda", 0.5, kPaper);
    if (defaulted("method.inner_steps")) derive("method.inner_steps", 10, kPaper);
  }
  const std::string task_kind = values["tasks.kind"].get<std::string>();
  if (values["model.kind"].is_null()) {
    derive("model.kind", task_kind == "quadratic" ? "quadratic" : "mlp", kArtifact);
  }
  if (values["model.loss"].is_null()) {
    derive("model.loss", task_kind == "gaussian-classes" ? "cross-entropy" : "squared-error",
           kArtifact);
  }
  const double lambda = values["method.lambda"].get<double>();
  if (!(lambda > 0.0)) {
    throw ValidationError("method.lambda must be positive (got " +
                              values["method.lambda"].dump() + ")",
                          "method.lambda");
  }
  const double kappa = values["tasks.kappa"].get<double>();
  if (task_kind == "quadratic") {
    if (values["method.mu"].is_null()) derive("method.mu", lambda + 1.0, kArtifact);
    if (values["method.beta"].is_null()) derive("method.beta", lambda + kappa, kArtifact);
  }
  if (values["method.inner_lr"].is_null()) {
    derive("method.inner_lr",
           task_kind == "quadratic" ? 2.0 / (2.0 * lambda + 1.0 + kappa) : 0.01, kArtifact);
  }

  json doc = json::object();
  for (const Field& f : schema()) slot(doc, f.path) = values[f.path];

  ExperimentConfig c;
  c.resolved = doc;
  for (const Field& f : schema()) c.provenance[f.path] = origin[f.path];

  c.experiment = experiment_kind_from_string(get<std::string>(doc, "experiment"));
  c.seed = get<std::uint64_t>(doc, "seed");
  c.output_dir = get<std::string>(doc, "output_dir");
  c.report_formats = get<std::vector<std::string>>(doc, "report_formats");
  c.workers = get<int>(doc, "workers");
  if (c.workers < 1) throw ValidationError("workers must be >= 1", "workers");

  checked("tasks", [&] {
    c.tasks.kind = task_kind_from_string(task_kind);
    c.tasks.dim = get<Index>(doc, "tasks.dim");
    c.tasks.kappa = kappa;
    c.tasks.spectrum = spectrum_from_string(get<std::string>(doc, "tasks.spectrum"));
    c.tasks.spectrum_levels = get<int>(doc, "tasks.spectrum_levels");
    c.tasks.ways = get<int>(doc, "tasks.ways");
    c.tasks.shots = get<int>(doc, "tasks.shots");
    c.tasks.test_shots = get<int>(doc, "tasks.test_shots");
    c.tasks.base_seed = get<std::uint64_t>(doc, "tasks.base_seed");
    validate(c.tasks);
  });
  c.meta_train_tasks = get<std::size_t>(doc, "tasks.meta_train_tasks");
  c.meta_test_tasks = get<std::size_t>(doc, "tasks.meta_test_tasks");

  checked("model", [&] {
    const ModelKind kind = model_kind_from_string(get<std::string>(doc, "model.kind"));
    const LossKind loss = loss_kind_from_string(get<std::string>(doc, "model.loss"));
    const bool quad_tasks = c.tasks.kind == TaskKind::kQuadratic;
    if ((kind == ModelKind::kQuadratic) != quad_tasks) {
      throw ValidationError(
          "quadratic models go with quadratic tasks only (tasks.kind = " + task_kind + ")",
          "model.kind");
    }
    Index in = 1, out = 1;
    if (c.tasks.kind == TaskKind::kGaussianClasses) {
      in = c.tasks.dim;
      out = c.tasks.ways;
    }
    std::vector<Index> hidden;
    for (const auto h : get<std::vector<long long>>(doc, "model.hidden")) {
      hidden.push_back(static_cast<Index>(h));
    }
    switch (kind) {
      case ModelKind::kQuadratic: c.model = Model::quadratic(c.tasks.dim); break;
      case ModelKind::kLinear:
        c.model = Model::linear(in, out);
        c.model.loss = loss;
        break;
      case ModelKind::kMlp:
        c.model = Model::mlp(in, hidden, out,
                             activation_from_string(get<std::string>(doc, "model.activation")),
                             loss);
        break;
    }
    validate(c.model);
  });

  checked("method", [&] {
    c.engine.method = meta_method_from_string(get<std::string>(doc, "method.engine"));
    c.engine.lambda = lambda;
    InnerBudget& b = c.engine.inner;
    b.method = inner_method_from_string(get<std::string>(doc, "method.inner_solver"));
    b.steps = get<int>(doc, "method.inner_steps");
    b.lr = get<double>(doc, "method.inner_lr");
    b.cg_steps = get<int>(doc, "method.newton_cg_steps");
    b.newton_reps = get<int>(doc, "method.newton_reps");
    const json& td = at(doc, "method.target_delta");
    if (!td.is_null()) b.target_delta = td.get<double>();
    const json& mu = at(doc, "method.mu");
    if (!mu.is_null()) b.mu = mu.get<double>();
    const json& beta = at(doc, "method.beta");
    if (!beta.is_null()) b.beta = beta.get<double>();
    c.engine.cg.max_iters = get<int>(doc, "method.cg_steps");
    c.engine.cg.residual_tol = get<double>(doc, "method.cg_tol");
    c.engine.cg.truncate_on_negative_curvature =
        get<std::string>(doc, "method.cg_on_negative_curvature") == "truncate";
    validate(c.engine);
  });

  checked("outer", [&] {
    c.outer.optimizer = outer_optimizer_from_string(get<std::string>(doc, "outer.optimizer"));
    c.outer.lr = get<double>(doc, "outer.lr");
    c.outer.iterations = get<int>(doc, "outer.iterations");
    const int batch = get<int>(doc, "outer.batch_size");
    if (batch < 1) throw ValidationError("outer.batch_size must be >= 1", "outer.batch_size");
    c.outer.batch_size = static_cast<std::size_t>(batch);
    const json& tol = at(doc, "outer.grad_tol");
    if (!tol.is_null()) c.outer.grad_tol = tol.get<double>();
    c.outer.beta1 = get<double>(doc, "outer.adam_beta1");
    c.outer.beta2 = get<double>(doc, "outer.adam_beta2");
    c.outer.eps = get<double>(doc, "outer.adam_eps");
    c.outer.record_wall_time = get<bool>(doc, "outer.record_wall_time");
    validate(c.outer);
  });

  checked("compare", [&] {
    c.compare_grid.inner_steps = get<std::vector<int>>(doc, "compare.inner_steps");
    c.compare_grid.cg_steps = get<std::vector<int>>(doc, "compare.cg_steps");
    c.compare_grid.maml = get<bool>(doc, "compare.maml");
    c.compare_grid.fomaml = get<bool>(doc, "compare.fomaml");
    c.compare_grid.reptile = get<bool>(doc, "compare.reptile");
    c.compare_tasks = get<std::size_t>(doc, "compare.tasks");
    if (c.compare_tasks < 1) throw ConfigError("compare.tasks must be >= 1");
    validate(c.compare_grid);
  });

  checked("verify", [&] {
    c.verify_tasks = get<std::size_t>(doc, "verify.tasks");
    c.verify_dim = get<Index>(doc, "verify.dim");
    c.verify_fd_step = get<double>(doc, "verify.fd_step");
    if (c.verify_tasks < 1) throw ConfigError("verify.tasks must be >= 1");
    if (c.verify_dim < 1) throw ConfigError("verify.dim must be >= 1");
    if (!(c.verify_fd_step > 0.0)) throw ConfigError("verify.fd_step must be positive");
  });

  const json& ckpt = at(doc, "eval.checkpoint");
  if (!ckpt.is_null()) c.eval_checkpoint = ckpt.get<std::string>();
  checked("eval", [&] {
    c.eval_inner = c.engine.inner;
    const json& solver = at(doc, "eval.inner_solver");
    if (!solver.is_null()) {
      c.eval_inner.method = inner_method_from_string(solver.get<std::string>());
    }
    const json& steps = at(doc, "eval.inner_steps");
    if (!steps.is_null()) c.eval_inner.steps = steps.get<int>();
    const json& lr = at(doc, "eval.inner_lr");
    if (!lr.is_null()) c.eval_inner.lr = lr.get<double>();
    validate(c.eval_inner);
  });

  json canonical = doc;
  canonical.erase("output_dir");
  canonical.erase("workers");
  canonical.erase("report_formats");
  // A train run and the eval of its checkpoint share one hash.
  canonical.erase("experiment");
  canonical.erase("eval");
  c.hash = fnv1a_hex(canonical.dump());
  return c;
}

ExperimentConfig load_config(const std::string& path, const CliOverrides& cli) {
  std::ifstream f(path);
  if (!f) throw ValidationError("cannot read config file '" + path + "'", "");
  std::ostringstream ss;
  ss << f.rdbuf();
  json doc;
  try {
    doc = json::parse(ss.str());
  } catch (const json::exception& e) {
    throw ValidationError("config file '" + path + "' is not valid JSON: " + e.what(), "");
  }
  return resolve_config(doc, environment_overrides(), cli);
}

json resolved_document(const ExperimentConfig& c) {
  json prov = json::object();
  for (const auto& [path, p] : c.provenance) prov[path] = to_string(p);
  return {{"config", c.resolved},
          {"provenance", prov},
          {"config_hash", c.hash},
          {"seed", c.seed}};
}

TrainerConfig trainer_config(const ExperimentConfig& c) {
  TrainerConfig t;
  t.model = c.model;
  t.tasks = c.tasks;
  t.meta_train_tasks = c.meta_train_tasks;
  t.engine = c.engine;
  t.outer = c.outer;
  t.seed = c.seed;
  t.workers = c.workers;
  t.config_hash = c.hash;
  return t;
}

}  // namespace imaml
