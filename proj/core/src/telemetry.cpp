#include "imaml/telemetry.hpp"

#include <algorithm>
#include <string>

#include "format.hpp"
#include "imaml/errors.hpp"
#include "imaml/exact_oracle.hpp"
#include "parallel.hpp"

namespace imaml {

CostLedger CostLedger::of(const MetaGradReport& r) {
  CostLedger l;
  l.grad_evals = r.grad_evals;
  l.hvps = r.hvps;
  l.peak_memory = r.peak_memory;
  l.wall_ms = r.wall_ms;
  l.method = Coord<std::string>::of(to_string(r.method));
  return l;
}

CostLedger merge(const CostLedger& a, const CostLedger& b) {
  CostLedger out;
  out.grad_evals = a.grad_evals + b.grad_evals;
  out.hvps = a.hvps + b.hvps;
  out.peak_memory = std::max(a.peak_memory, b.peak_memory);
  out.wall_ms = a.wall_ms + b.wall_ms;
  out.method = merge(a.method, b.method);
  out.inner_steps = merge(a.inner_steps, b.inner_steps);
  out.cg_steps = merge(a.cg_steps, b.cg_steps);
  out.kappa = merge(a.kappa, b.kappa);
  out.lambda = merge(a.lambda, b.lambda);
  return out;
}

CostLedger merge(const std::vector<CostLedger>& ledgers) {
  CostLedger out;
  for (const CostLedger& l : ledgers) out = merge(out, l);
  return out;
}

namespace {

template <class T>
nlohmann::json coord_json(const Coord<T>& c) {
  switch (c.state) {
    case Coord<T>::State::kUnset: return nullptr;
    case Coord<T>::State::kValue: return c.value;
    case Coord<T>::State::kConflict: return "mixed";
  }
  return nullptr;
}

}  // namespace

nlohmann::json to_json(const CostLedger& l) {
  return {{"grad_evals", l.grad_evals},
          {"hvps", l.hvps},
          {"peak_mem_proxy", l.peak_memory},
          {"wall_ms", l.wall_ms},
          {"method", coord_json(l.method)},
          {"inner_steps", coord_json(l.inner_steps)},
          {"cg_steps", coord_json(l.cg_steps)},
          {"kappa", coord_json(l.kappa)},
          {"lambda", coord_json(l.lambda)}};
}

std::size_t SweepGrid::cells() const {
  const std::size_t per_budget = cg_steps.size() + (maml ? 1 : 0) +
                                 (fomaml ? 1 : 0) + (reptile ? 1 : 0);
  return inner_steps.size() * per_budget;
}

void validate(const SweepGrid& grid) {
  if (grid.inner_steps.empty()) throw ConfigError("sweep needs at least one inner step budget");
  for (int s : grid.inner_steps) {
    if (s < 0) throw ConfigError("sweep inner steps must be >= 0");
  }
  for (int c : grid.cg_steps) {
    if (c < 0) throw ConfigError("sweep CG steps must be >= 0");
  }
  if (grid.cells() == 0) throw ConfigError("sweep grid has no cells");
}

Vector unrolled_gd_meta_gradient(const Task& task, const Vector& theta,
                                 double lambda, double lr, int steps) {
  if (!task.quadratic) {
    throw OracleUnavailableError("unrolled Jacobian needs a quadratic task");
  }
  const QuadraticPayload& q = *task.quadratic;
  const Index d = q.b.size();
  if (theta.size() != d) throw DimensionError("theta does not match the task dimension");
  if (d > kDenseDimLimit) {
    throw OracleUnavailableError("dense path Jacobian is limited to d <= " +
                                 std::to_string(kDenseDimLimit));
  }
  Matrix step = -lr * q.a;
  step.diagonal().array() += 1.0 - lr * lambda;
  Matrix jac = Matrix::Identity(d, d);
  Vector phi = theta;
  for (int k = 0; k < steps; ++k) {
    phi -= lr * (q.a * phi + q.b + lambda * (phi - theta));
    jac = step * jac;
    jac.diagonal().array() += lr * lambda;
  }
  return jac.transpose() * (q.test_a * phi + q.test_b);
}

namespace {

struct Cell {
  MetaMethod method;
  int inner_steps;
  std::optional<int> cg_steps;
};

struct CellResult {
  double rel = 0.0;
  double abs = 0.0;
  std::optional<double> approx;
  double outer_loss = 0.0;
  CostLedger ledger;
};

double relative(const Vector& g, const Vector& target) {
  const double err = (g - target).norm();
  const double scale = target.norm();
  return scale > 0.0 ? err / scale : err;
}

}  // namespace

std::vector<CompareRow> compare_methods(const CompareSpec& spec) {
  validate(spec.grid);
  if (!(spec.lambda > 0.0)) throw ConfigError("lambda must be positive");
  if (spec.tasks.empty()) throw ConfigError("comparison needs at least one task");
  validate(spec.model);
  if (spec.theta.size() != spec.model.dim()) {
    throw DimensionError("theta has " + std::to_string(spec.theta.size()) +
                         " entries, model expects " + std::to_string(spec.model.dim()));
  }
  bool all_quadratic = true;
  for (const Task& t : spec.tasks) all_quadratic &= t.quadratic.has_value();
  MetaGradOracle oracle = spec.oracle;
  if (!oracle) {
    if (!all_quadratic) {
      throw OracleUnavailableError(
          "no exact meta-gradient for this task family; supply an oracle or use "
          "quadratic tasks");
    }
    const double lambda = spec.lambda;
    oracle = [lambda](const Task& t, const Vector& theta) {
      return exact_meta_gradient(t, theta, lambda).meta_gradient;
    };
  }
  const bool path_oracle = all_quadratic && spec.inner.method == InnerMethod::kGd;

  std::vector<Cell> cells;
  for (int s : spec.grid.inner_steps) {
    for (int c : spec.grid.cg_steps) cells.push_back({MetaMethod::kImaml, s, c});
    if (spec.grid.maml) cells.push_back({MetaMethod::kMaml, s, std::nullopt});
    if (spec.grid.fomaml) cells.push_back({MetaMethod::kFomaml, s, std::nullopt});
    if (spec.grid.reptile) cells.push_back({MetaMethod::kReptile, s, std::nullopt});
  }

  const std::size_t nt = spec.tasks.size();
  std::vector<TaskLosses> losses(nt);
  std::vector<Vector> exact(nt);
  detail::parallel_for(nt, spec.workers, [&](std::size_t i) {
    losses[i] = bind_task(spec.model, spec.tasks[i]);
    exact[i] = oracle(spec.tasks[i], spec.theta);
  });

  const std::size_t nb = spec.grid.inner_steps.size();
  std::vector<Vector> path_target(path_oracle ? nb * nt : 0);
  if (path_oracle) {
    detail::parallel_for(nb * nt, spec.workers, [&](std::size_t j) {
      path_target[j] = unrolled_gd_meta_gradient(
          spec.tasks[j % nt], spec.theta, spec.lambda, spec.inner.lr,
          spec.grid.inner_steps[j / nt]);
    });
  }

  std::vector<CellResult> results(cells.size() * nt);
  detail::parallel_for(results.size(), spec.workers, [&](std::size_t j) {
    const Cell& cell = cells[j / nt];
    const std::size_t i = j % nt;
    EngineSpec engine;
    engine.method = cell.method;
    engine.lambda = spec.lambda;
    engine.inner = spec.inner;
    engine.inner.steps = cell.inner_steps;
    engine.cg.max_iters = cell.cg_steps.value_or(0);
    engine.cg.residual_tol = spec.cg_tol;
    const MetaGradReport r = meta_gradient(engine, losses[i], spec.theta);

    CellResult& out = results[j];
    out.abs = (r.g - exact[i]).norm();
    out.rel = relative(r.g, exact[i]);
    if (path_oracle) {
      const auto b = static_cast<std::size_t>(
          std::find(spec.grid.inner_steps.begin(), spec.grid.inner_steps.end(),
                    cell.inner_steps) -
          spec.grid.inner_steps.begin());
      out.approx = relative(r.g, path_target[b * nt + i]);
    }
    out.outer_loss = r.outer_loss;
    out.ledger = CostLedger::of(r);
    out.ledger.inner_steps = Coord<int>::of(cell.inner_steps);
    if (cell.cg_steps) out.ledger.cg_steps = Coord<int>::of(*cell.cg_steps);
    out.ledger.lambda = Coord<double>::of(spec.lambda);
    if (spec.kappa) out.ledger.kappa = Coord<double>::of(*spec.kappa);
  });

  std::vector<CompareRow> rows;
  rows.reserve(cells.size());
  const double inv = 1.0 / static_cast<double>(nt);
  for (std::size_t c = 0; c < cells.size(); ++c) {
    CompareRow row;
    row.method = cells[c].method;
    row.inner_steps = cells[c].inner_steps;
    row.cg_steps = cells[c].cg_steps;
    double approx = 0.0;
    for (std::size_t i = 0; i < nt; ++i) {
      const CellResult& r = results[c * nt + i];
      row.exact_error += r.rel * inv;
      row.exact_error_abs += r.abs * inv;
      row.outer_loss += r.outer_loss * inv;
      if (r.approx) approx += *r.approx * inv;
      row.ledger = merge(row.ledger, r.ledger);
    }
    if (path_oracle) row.approx_error = approx;
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string compare_csv_header() {
  return "method,inner_steps,cg_steps,exact_error,exact_error_abs,approx_error,"
         "outer_loss,grad_evals,hvps,peak_mem_proxy,wall_ms";
}

std::string to_csv_line(const CompareRow& row) {
  std::string s = to_string(row.method);
  s += ',' + std::to_string(row.inner_steps);
  s += ',' + (row.cg_steps ? std::to_string(*row.cg_steps) : std::string());
  s += ',' + detail::format_double(row.exact_error);
  s += ',' + detail::format_double(row.exact_error_abs);
  s += ',' + (row.approx_error ? detail::format_double(*row.approx_error) : std::string());
  s += ',' + detail::format_double(row.outer_loss);
  s += ',' + std::to_string(row.ledger.grad_evals);
  s += ',' + std::to_string(row.ledger.hvps);
  s += ',' + std::to_string(row.ledger.peak_memory);
  s += ',' + detail::format_double(row.ledger.wall_ms);
  return s;
}

nlohmann::json to_json(const CompareRow& row) {
  nlohmann::json j;
  j["method"] = to_string(row.method);
  j["inner_steps"] = row.inner_steps;
  j["cg_steps"] = row.cg_steps ? nlohmann::json(*row.cg_steps) : nlohmann::json(nullptr);
  j["exact_error"] = row.exact_error;
  j["exact_error_abs"] = row.exact_error_abs;
  j["approx_error"] =
      row.approx_error ? nlohmann::json(*row.approx_error) : nlohmann::json(nullptr);
  j["outer_loss"] = row.outer_loss;
  j["ledger"] = to_json(row.ledger);
  return j;
}

}  // namespace imaml
