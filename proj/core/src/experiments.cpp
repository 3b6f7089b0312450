#include "imaml/experiments.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <Eigen/LU>

#include "imaml/errors.hpp"
#include "imaml/exact_oracle.hpp"
#include "imaml/meta_gradient.hpp"
#include "imaml/meta_trainer.hpp"
#include "imaml/telemetry.hpp"

#include "format.hpp"
#include "rng.hpp"

namespace imaml {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

bool wants(const ExperimentConfig& c, const std::string& format) {
  return std::find(c.report_formats.begin(), c.report_formats.end(), format) !=
         c.report_formats.end();
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open '" + path.string() + "' for writing");
  f << content;
  if (!f) throw Error("failed writing '" + path.string() + "'");
}

fs::path prepare_output(const ExperimentConfig& c) {
  const fs::path dir = c.output_dir;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create output directory '" + dir.string() + "': " + ec.message());
  write_file(dir / "config.resolved.json", resolved_document(c).dump(2) + "\n");
  return dir;
}

json stamp(const ExperimentConfig& c, json summary) {
  summary["config_hash"] = c.hash;
  summary["seed"] = c.seed;
  summary["experiment"] = to_string(c.experiment);
  return summary;
}

void finish(const ExperimentConfig& c, const fs::path& dir, const RunOutput& out) {
  if (wants(c, "csv")) write_file(dir / "metrics.csv", out.table_csv);
  if (wants(c, "json")) write_file(dir / "results.json", out.summary.dump(2) + "\n");
}

std::string preamble(const ExperimentConfig& c) {
  return "# config_hash=" + c.hash + " seed=" + std::to_string(c.seed) + "\n";
}

Vector gaussian(Index d, std::uint64_t seed) {
  Rng rng(seed);
  Vector v(d);
  for (Index i = 0; i < d; ++i) v(i) = rng.normal();
  return v;
}

double rel_fro(const Matrix& a, const Matrix& b) {
  const double scale = b.norm();
  return scale > 0.0 ? (a - b).norm() / scale : (a - b).norm();
}

}  // namespace

std::vector<OracleCheck> verify_oracle_suite(const ExperimentConfig& c) {
  const double lambda = c.engine.lambda;
  TaskDistribution dist = c.tasks;
  dist.kind = TaskKind::kQuadratic;
  dist.dim = c.verify_dim;
  const std::vector<Task> tasks =
      sample_tasks(dist, c.verify_tasks, mix_seed(c.seed, kVerifyStream));
  const Model model = Model::quadratic(dist.dim);
  InnerBudget inner = c.engine.inner;
  if (inner.method == InnerMethod::kGd) {
    // Step size of the generator spectrum at this lambda.
    inner.lr = 2.0 / (2.0 * lambda + 1.0 + dist.kappa);
  }
  inner.mu.reset();
  inner.beta.reset();
  if (inner.method == InnerMethod::kAgd) {
    inner.mu = lambda + 1.0;
    inner.beta = lambda + dist.kappa;
  }

  OracleCheck stationarity{"inner_stationarity", true, 0.0, 1e-10};
  OracleCheck identity{"implicit_jacobian_closed_form", true, 0.0, 1e-10};
  OracleCheck resolve{"implicit_jacobian_perturb_resolve", true, 0.0, 1e-5};
  OracleCheck fd{"exact_meta_gradient_vs_finite_difference", true, 0.0, 1e-6};
  OracleCheck fomaml{"fomaml_equals_imaml_zero_cg", true, 0.0, 0.0};
  OracleCheck prox{"proximal_point_identity", true, 0.0, 1e-9};
  OracleCheck bound{"implicit_gradient_error_bound", true, 0.0, 1.0};

  for (std::size_t t = 0; t < tasks.size(); ++t) {
    const Task& task = tasks[t];
    const QuadraticPayload& q = *task.quadratic;
    const Index d = dist.dim;
    const Vector theta = gaussian(d, mix_seed(c.seed, 1000 + t));
    const TaskLosses losses = bind_task(model, task);
    const ExactMetaGrad ex = exact_meta_gradient(task, theta, lambda);

    const InnerObjective obj(losses.train, theta, lambda);
    const double scale = std::max(1.0, (lambda * theta - q.b).norm());
    stationarity.measured =
        std::max(stationarity.measured, obj.gradient(ex.phi_star).norm() / scale);

    const Matrix jac = implicit_jacobian_dense(losses.train, ex.phi_star, lambda);
    Matrix shifted = q.a;
    shifted.diagonal().array() += lambda;
    const Matrix closed = lambda * shifted.inverse();
    identity.measured = std::max(identity.measured, rel_fro(jac, closed));

    const double h = 1e-5;
    Matrix numeric(d, d);
    for (Index j = 0; j < d; ++j) {
      Vector up = theta, down = theta;
      up(j) += h;
      down(j) -= h;
      numeric.col(j) = (exact_inner_solution(task, up, lambda) -
                        exact_inner_solution(task, down, lambda)) /
                       (2.0 * h);
    }
    resolve.measured = std::max(resolve.measured, rel_fro(jac, numeric));

    const FiniteDifferenceResult fdr = finite_difference_meta_gradient(
        quadratic_pipeline(task, lambda), theta, c.verify_fd_step);
    fd.measured = std::max(fd.measured, rel_fro(fdr.gradient, ex.meta_gradient));

    CGOptions zero;
    zero.max_iters = 0;
    const MetaGradReport a = fomaml_meta_gradient(losses, theta, lambda, inner);
    const MetaGradReport b = imaml_meta_gradient(losses, theta, lambda, inner, zero);
    const bool same = a.g.size() == b.g.size() &&
                      std::equal(a.g.data(), a.g.data() + a.g.size(), b.g.data());
    if (!same) fomaml.measured += 1.0;  // count of tasks that differ

    const Vector lhs = theta - ex.phi_star;
    const Vector rhs = (q.a * ex.phi_star + q.b) / lambda;
    prox.measured = std::max(prox.measured, (lhs - rhs).norm());

    // Measured error over the bound (a ratio <= 1 passes).
    const MetaGradReport r = imaml_meta_gradient(losses, theta, lambda, inner, c.engine.cg);
    const AnalysisConstants k = quadratic_constants(task, lambda, theta);
    const double delta = (r.phi - ex.phi_star).norm();
    const double mu_op = k.mu / lambda;
    const double delta_prime = r.cg->residual_norm / mu_op;
    const double err = (r.g - ex.meta_gradient).norm();
    const double b3 = lemma3_error_bound(k, delta, delta_prime);
    const double ratio = b3 > 0.0 ? err / b3 : (err > 0.0 ? 2.0 : 0.0);
    bound.measured = std::max(bound.measured, ratio);
  }
  std::vector<OracleCheck> checks = {stationarity, identity, resolve, fd,
                                     fomaml,       prox,     bound};
  for (OracleCheck& ch : checks) ch.passed = ch.measured <= ch.tolerance;
  return checks;
}

RunOutput run_verify_oracle(const ExperimentConfig& c) {
  const fs::path dir = prepare_output(c);
  const std::vector<OracleCheck> checks = verify_oracle_suite(c);
  RunOutput out;
  json rows = json::array();
  out.table_csv = preamble(c) + "check,passed,measured,tolerance\n";
  for (const OracleCheck& ch : checks) {
    if (!ch.passed) ++out.failures;
    rows.push_back({{"check", ch.name},
                    {"passed", ch.passed},
                    {"measured", ch.measured},
                    {"tolerance", ch.tolerance}});
    out.table_csv += ch.name + ',' + (ch.passed ? "true" : "false") + ',' +
                     detail::format_double(ch.measured) + ',' +
                     detail::format_double(ch.tolerance) + '\n';
  }
  out.summary = stamp(c, {{"checks", rows},
                          {"failures", out.failures},
                          {"tasks", c.verify_tasks},
                          {"dim", c.verify_dim},
                          {"lambda", c.engine.lambda}});
  finish(c, dir, out);
  return out;
}

RunOutput run_compare(const ExperimentConfig& c) {
  const fs::path dir = prepare_output(c);
  CompareSpec spec;
  spec.model = c.model;
  spec.tasks = sample_tasks(c.tasks, c.compare_tasks, mix_seed(c.seed, kCompareStream));
  spec.theta = initial_params(c.model, c.seed);
  spec.lambda = c.engine.lambda;
  spec.inner = c.engine.inner;
  spec.cg_tol = c.engine.cg.residual_tol;
  spec.grid = c.compare_grid;
  if (c.tasks.kind == TaskKind::kQuadratic) spec.kappa = c.tasks.kappa;
  spec.workers = c.workers;
  const std::vector<CompareRow> rows = compare_methods(spec);

  RunOutput out;
  out.table_csv = preamble(c) + compare_csv_header() + "\n";
  json jrows = json::array();
  for (const CompareRow& r : rows) {
    out.table_csv += to_csv_line(r) + "\n";
    jrows.push_back(to_json(r));
  }
  out.summary = stamp(c, {{"rows", jrows},
                          {"cells", rows.size()},
                          {"tasks", c.compare_tasks},
                          {"lambda", c.engine.lambda}});
  finish(c, dir, out);
  return out;
}

RunOutput run_train(const ExperimentConfig& c, const std::optional<std::string>& resume) {
  const fs::path dir = prepare_output(c);
  MetaTrainer trainer(trainer_config(c));
  bool mismatch = false;
  if (resume) {
    const Checkpoint ck = load_checkpoint(*resume, c.hash);
    mismatch = ck.config_mismatch;
    trainer.restore(ck);
  }
  const fs::path metrics = dir / "metrics.csv";
  const bool write_csv = wants(c, "csv");
  const bool append = resume && fs::exists(metrics);
  std::ofstream log;
  std::string table = append ? std::string() : metrics_csv_preamble(c.hash, c.seed);
  if (write_csv) {
    log.open(metrics, std::ios::binary | (append ? std::ios::app : std::ios::trunc));
    if (!log) throw Error("cannot open '" + metrics.string() + "' for writing");
    log << table;
  }
  const auto rows = trainer.run([&](const OuterState&, const MetricsRow& row) {
    const std::string line = to_csv_line(row) + "\n";
    table += line;
    if (write_csv) log << line << std::flush;
    return true;
  });
  if (write_csv && !log) throw Error("failed writing '" + metrics.string() + "'");

  const Checkpoint ck = trainer.checkpoint();
  save_checkpoint((dir / "checkpoint.bin").string(), ck);

  RunOutput out;
  out.table_csv = table;
  const OuterState& s = trainer.state();
  out.summary = stamp(c, {{"iterations", s.iteration},
                          {"steps_this_run", rows.size()},
                          {"outer_loss", s.outer_loss},
                          {"grad_norm", s.grad_norm},
                          {"grad_evals", s.grad_evals},
                          {"hvps", s.hvps},
                          {"engine_calls", s.engine_calls},
                          {"theta_norm", s.theta.norm()},
                          {"resumed_from", resume ? json(*resume) : json(nullptr)},
                          {"config_mismatch", mismatch}});
  if (wants(c, "json")) write_file(dir / "results.json", out.summary.dump(2) + "\n");
  return out;
}

RunOutput run_eval(const ExperimentConfig& c) {
  const fs::path dir = prepare_output(c);
  const Vector initial = initial_params(c.model, c.seed);
  Vector theta = initial;
  bool mismatch = false;
  if (c.eval_checkpoint) {
    const Checkpoint ck = load_checkpoint(*c.eval_checkpoint);
    mismatch = ck.config_hash != c.hash;
    if (ck.state.theta.size() != c.model.dim()) {
      throw CheckpointError("checkpoint theta has " + std::to_string(ck.state.theta.size()) +
                            " entries, model expects " + std::to_string(c.model.dim()));
    }
    theta = ck.state.theta;
  }
  if (c.meta_test_tasks < 1) throw ValidationError("eval needs tasks.meta_test_tasks >= 1",
                                                   "tasks.meta_test_tasks");
  const std::vector<Task> tasks =
      sample_tasks(c.tasks, c.meta_test_tasks, mix_seed(c.seed, kMetaTestStream));
  const auto scores = evaluate_meta_test(c.model, theta, tasks, c.engine.lambda,
                                         c.eval_inner, c.workers);
  const auto baseline = evaluate_meta_test(c.model, initial, tasks, c.engine.lambda,
                                           c.eval_inner, c.workers);
  RunOutput out;
  out.table_csv = preamble(c) + "task_id,test_loss,accuracy,baseline_test_loss\n";
  json per = json::array();
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const TaskScore& s = scores[i];
    out.table_csv += std::to_string(s.task_id) + ',' + detail::format_double(s.test_loss) +
                     ',' + (s.accuracy ? detail::format_double(*s.accuracy) : "") + ',' +
                     detail::format_double(baseline[i].test_loss) + '\n';
    per.push_back({{"task_id", s.task_id},
                   {"test_loss", s.test_loss},
                   {"accuracy", s.accuracy ? json(*s.accuracy) : json(nullptr)},
                   {"baseline_test_loss", baseline[i].test_loss}});
  }
  out.summary = stamp(c, {{"mean_test_loss", mean_test_loss(scores)},
                          {"baseline_mean_test_loss", mean_test_loss(baseline)},
                          {"checkpoint", c.eval_checkpoint ? json(*c.eval_checkpoint)
                                                           : json(nullptr)},
                          {"config_mismatch", mismatch},
                          {"tasks", per}});
  finish(c, dir, out);
  return out;
}

RunOutput run_experiment(const ExperimentConfig& c, const std::optional<std::string>& resume) {
  switch (c.experiment) {
    case ExperimentKind::kTrain: return run_train(c, resume);
    case ExperimentKind::kCompare: return run_compare(c);
    case ExperimentKind::kVerify: return run_verify_oracle(c);
    case ExperimentKind::kEval: return run_eval(c);
  }
  throw ConfigError("unknown experiment");
}

}  // namespace imaml
