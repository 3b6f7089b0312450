#include "imaml/meta_gradient.hpp"

#include <chrono>
#include <string>
#include <utility>
#include <vector>

#include "imaml/errors.hpp"

namespace imaml {

std::string to_string(MetaMethod m) {
  switch (m) {
    case MetaMethod::kImaml: return "imaml";
    case MetaMethod::kMaml: return "maml";
    case MetaMethod::kFomaml: return "fomaml";
    case MetaMethod::kReptile: return "reptile";
  }
  return "?";
}

MetaMethod meta_method_from_string(const std::string& s) {
  if (s == "imaml") return MetaMethod::kImaml;
  if (s == "maml") return MetaMethod::kMaml;
  if (s == "fomaml") return MetaMethod::kFomaml;
  if (s == "reptile") return MetaMethod::kReptile;
  throw ConfigError("unsupported meta-gradient method '" + s + "'");
}

nlohmann::json to_json(const MetaGradReport& r) {
  nlohmann::json j;
  j["method"] = to_string(r.method);
  j["grad_norm"] = r.g.norm();
  j["outer_loss"] = r.outer_loss;
  j["grad_evals"] = r.grad_evals;
  j["hvps"] = r.hvps;
  j["peak_mem_proxy"] = r.peak_memory;
  j["wall_ms"] = r.wall_ms;
  j["inner_iterations"] = r.inner.iterations;
  j["inner_grad_norm"] = r.inner.grad_norm;
  if (r.cg) {
    j["cg_iterations"] = r.cg->iterations;
    j["cg_residual"] = r.cg->residual_norm;
  }
  return j;
}

void validate(const EngineSpec& spec) {
  if (!(spec.lambda > 0.0)) {
    throw ConfigError("regularization strength lambda must be positive (got " +
                      std::to_string(spec.lambda) + ")");
  }
  validate(spec.inner);
  if (spec.cg.max_iters < 0) throw ConfigError("CG max_iters must be >= 0");
  if (spec.method == MetaMethod::kMaml && spec.inner.steps > 0 &&
      !(spec.inner.lr > 0.0)) {
    throw ConfigError("MAML needs a positive inner learning rate");
  }
}

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

// Test loss and its gradient at phi.
std::pair<double, Vector> outer_gradient(const BoundLoss& test, const Vector& phi,
                                         MemoryMeter* meter) {
  Tape tape = test.record(phi, meter);
  return {tape.value(), tape.gradient()};
}

// Adapts phi_i and fills the fields shared by the first-order engines.
MetaGradReport adapt(MetaMethod method, const TaskLosses& task,
                     const Vector& theta, double lambda,
                     const InnerBudget& inner, MemoryMeter& meter) {
  MetaGradReport r;
  r.method = method;
  const InnerObjective obj(task.train, theta, lambda);
  r.inner = solve_inner(obj, inner, &meter);
  r.phi = r.inner.phi;
  r.grad_evals = r.inner.gradient_evals;
  r.hvps = r.inner.hvps;
  return r;
}

}  // namespace

Vector implicit_meta_gradient_at(const BoundLoss& train, const Vector& phi,
                                 double lambda, const Vector& v,
                                 const CGOptions& cg, CGResult* diagnostics,
                                 MemoryMeter* meter) {
  if (!(lambda > 0.0)) throw ConfigError("lambda must be positive");
  if (v.size() != phi.size()) throw DimensionError("v and phi differ in size");
  if (cg.max_iters == 0) {
    if (diagnostics != nullptr) {
      *diagnostics = CGResult{};
      diagnostics->solution = v;
      diagnostics->residual_norm = 0.0;
    }
    return v;
  }
  Tape tape = train.record(phi, meter);
  const LinearOperator op{phi.size(), [&](const Vector& x) -> Vector {
                            return x + tape.hvp(x) / lambda;
                          }};
  CGResult res = cg_solve(op, v, cg);
  // Truncated before the first step: keep the first-order direction.
  if (res.negative_curvature && res.iterations == 0) res.solution = v;
  Vector g = res.solution;
  if (diagnostics != nullptr) *diagnostics = std::move(res);
  return g;
}

MetaGradReport imaml_meta_gradient(const TaskLosses& task, const Vector& theta,
                                   double lambda, const InnerBudget& inner,
                                   const CGOptions& cg) {
  const auto start = Clock::now();
  MemoryMeter meter;
  MetaGradReport r = adapt(MetaMethod::kImaml, task, theta, lambda, inner, meter);
  auto [loss, v] = outer_gradient(task.test, r.phi, &meter);
  r.outer_loss = loss;
  ++r.grad_evals;
  CGResult diag;
  r.g = implicit_meta_gradient_at(task.train, r.phi, lambda, v, cg, &diag, &meter);
  r.hvps += diag.matvecs;
  r.cg = std::move(diag);
  r.peak_memory = meter.peak();
  r.wall_ms = elapsed_ms(start);
  return r;
}

MetaGradReport maml_meta_gradient(const TaskLosses& task, const Vector& theta,
                                  double lambda, double alpha, int steps) {
  if (steps < 0) throw ConfigError("MAML unroll length must be >= 0");
  if (!(lambda > 0.0)) throw ConfigError("lambda must be positive");
  if (steps > 0 && !(alpha > 0.0)) throw ConfigError("MAML needs a positive step size");
  if (theta.size() != task.train.dim()) {
    throw DimensionError("theta has " + std::to_string(theta.size()) +
                         " entries, model expects " + std::to_string(task.train.dim()));
  }
  const auto start = Clock::now();
  MemoryMeter meter;
  MetaGradReport r;
  r.method = MetaMethod::kMaml;

  std::vector<Tape> path;
  path.reserve(static_cast<std::size_t>(steps));
  Vector phi = theta;
  double first_norm = 0.0;
  for (int k = 0; k < steps; ++k) {
    try {
      path.push_back(task.train.record(phi, &meter));
    } catch (const NonFiniteError& e) {
      throw DivergenceError("MAML unroll diverged at step " + std::to_string(k) +
                            ": " + e.what());
    }
    const Vector grad = path.back().gradient() + lambda * (phi - theta);
    if (k == 0) first_norm = grad.norm();
    phi -= alpha * grad;
    if (!phi.allFinite()) {
      throw DivergenceError("MAML unroll diverged: non-finite iterate at step " +
                            std::to_string(k + 1));
    }
  }
  r.inner.phi = phi;
  r.inner.iterations = steps;
  r.inner.gradient_evals = static_cast<std::size_t>(steps);
  r.inner.initial_grad_norm = first_norm;
  r.phi = phi;
  r.grad_evals = static_cast<std::size_t>(steps);

  auto [loss, v] = outer_gradient(task.test, phi, &meter);
  r.outer_loss = loss;
  ++r.grad_evals;

  // a holds the adjoint of phi^k; the explicit theta-dependence of each step
  // contributes alpha * lambda * a.
  Vector a = std::move(v);
  Vector g = Vector::Zero(theta.size());
  for (int k = steps - 1; k >= 0; --k) {
    g += alpha * lambda * a;
    a -= alpha * (path.back().hvp(a) + lambda * a);
    ++r.hvps;
    path.pop_back();
  }
  r.g = g + a;
  r.peak_memory = meter.peak();
  r.wall_ms = elapsed_ms(start);
  return r;
}

MetaGradReport fomaml_meta_gradient(const TaskLosses& task, const Vector& theta,
                                    double lambda, const InnerBudget& inner) {
  const auto start = Clock::now();
  MemoryMeter meter;
  MetaGradReport r = adapt(MetaMethod::kFomaml, task, theta, lambda, inner, meter);
  auto [loss, v] = outer_gradient(task.test, r.phi, &meter);
  r.outer_loss = loss;
  ++r.grad_evals;
  r.g = std::move(v);
  r.peak_memory = meter.peak();
  r.wall_ms = elapsed_ms(start);
  return r;
}

MetaGradReport reptile_meta_gradient(const TaskLosses& task, const Vector& theta,
                                     double lambda, const InnerBudget& inner) {
  const auto start = Clock::now();
  MemoryMeter meter;
  MetaGradReport r = adapt(MetaMethod::kReptile, task, theta, lambda, inner, meter);
  r.outer_loss = task.test.value(r.phi, &meter);
  r.g = theta - r.phi;
  r.peak_memory = meter.peak();
  r.wall_ms = elapsed_ms(start);
  return r;
}

MetaGradReport meta_gradient(const EngineSpec& spec, const TaskLosses& task,
                             const Vector& theta) {
  switch (spec.method) {
    case MetaMethod::kImaml:
      return imaml_meta_gradient(task, theta, spec.lambda, spec.inner, spec.cg);
    case MetaMethod::kMaml:
      return maml_meta_gradient(task, theta, spec.lambda, spec.inner.lr,
                                spec.inner.steps);
    case MetaMethod::kFomaml:
      return fomaml_meta_gradient(task, theta, spec.lambda, spec.inner);
    case MetaMethod::kReptile:
      return reptile_meta_gradient(task, theta, spec.lambda, spec.inner);
  }
  throw ConfigError("unknown meta-gradient method");
}

}  // namespace imaml
