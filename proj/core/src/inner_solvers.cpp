#include "imaml/inner_solvers.hpp"

#include <cmath>
#include <string>

#include "imaml/errors.hpp"
#include "imaml/linear_solver.hpp"

namespace imaml {

std::string to_string(InnerMethod m) {
  switch (m) {
    case InnerMethod::kGd: return "gd";
    case InnerMethod::kAgd: return "agd";
    case InnerMethod::kNewtonCg: return "newton-cg";
  }
  return "?";
}

InnerMethod inner_method_from_string(const std::string& s) {
  if (s == "gd") return InnerMethod::kGd;
  if (s == "agd") return InnerMethod::kAgd;
  if (s == "newton-cg") return InnerMethod::kNewtonCg;
  throw ConfigError("unsupported inner solver '" + s + "'");
}

void validate(const InnerBudget& b) {
  if (b.steps < 0) throw ConfigError("inner step count must be >= 0");
  if (b.target_delta && !(*b.target_delta > 0.0)) {
    throw ConfigError("target delta must be positive");
  }
  if (b.mu && !(*b.mu > 0.0)) throw ConfigError("strong convexity mu must be positive");
  switch (b.method) {
    case InnerMethod::kGd:
      if (b.steps > 0 && !(b.lr > 0.0)) {
        throw ConfigError("gradient descent needs a positive learning rate");
      }
      break;
    case InnerMethod::kAgd:
      if (!b.mu || !b.beta) {
        throw ConfigError("accelerated gradient descent needs (mu, beta)");
      }
      if (!(*b.beta >= *b.mu)) throw ConfigError("agd needs beta >= mu > 0");
      break;
    case InnerMethod::kNewtonCg:
      if (b.cg_steps < 1) throw ConfigError("newton-cg needs cg_steps >= 1");
      if (b.newton_reps < 0) throw ConfigError("newton-cg needs newton_reps >= 0");
      break;
  }
  const LineSearchOptions& ls = b.line_search;
  if (!(ls.shrink > 0.0 && ls.shrink < 1.0)) throw ConfigError("line search shrink must be in (0, 1)");
  if (!(ls.armijo > 0.0 && ls.armijo < 1.0)) throw ConfigError("Armijo constant must be in (0, 1)");
  if (ls.max_backtracks < 0) throw ConfigError("max_backtracks must be >= 0");
}

namespace {

void check_init(const InnerObjective& obj, const Vector& init) {
  if (init.size() != obj.dim()) {
    throw DimensionError("initial point has " + std::to_string(init.size()) +
                         " entries, expected " + std::to_string(obj.dim()));
  }
}

// An overflowing loss surfaces as a non-finite tape node before the iterate
// itself stops being finite; both are reported as divergence at `step`.
Vector gradient_at(const InnerObjective& obj, const Vector& phi, MemoryMeter* meter,
                   int step, const char* solver) {
  try {
    return obj.gradient(phi, meter);
  } catch (const NonFiniteError& e) {
    throw DivergenceError(std::string(solver) + " diverged at step " + std::to_string(step) +
                          ": " + e.what());
  }
}

void require_finite(const Vector& phi, int step, const char* solver) {
  if (!phi.allFinite()) {
    throw DivergenceError(std::string(solver) + " diverged: non-finite iterate at step " +
                          std::to_string(step));
  }
}

void finish(SolveResult& r, const InnerBudget& b) {
  if (b.mu) r.delta_bound = r.grad_norm / *b.mu;
}

bool reached_target(const InnerBudget& b, double grad_norm) {
  return b.target_delta && b.mu && grad_norm / *b.mu <= *b.target_delta;
}

}  // namespace

LineSearchResult line_search(const InnerObjective& obj, const Vector& phi,
                             const Vector& direction, const Vector& grad,
                             const LineSearchOptions& options,
                             MemoryMeter* meter) {
  LineSearchResult r = line_search(obj, phi, obj.value(phi, meter), direction,
                                   grad, options, meter);
  ++r.evaluations;
  return r;
}

LineSearchResult line_search(const InnerObjective& obj, const Vector& phi,
                             double value_at_phi, const Vector& direction,
                             const Vector& grad,
                             const LineSearchOptions& options,
                             MemoryMeter* meter) {
  const double slope = grad.dot(direction);
  if (!(slope < 0.0)) {
    throw LineSearchError("line search needs a descent direction (grad^T d = " +
                          std::to_string(slope) + ")");
  }
  LineSearchResult r;
  r.value = value_at_phi;
  double t = 1.0;
  for (int k = 0; k <= options.max_backtracks; ++k, t *= options.shrink) {
    const Vector trial = phi + t * direction;
    double v = 0.0;
    ++r.evaluations;
    try {
      v = obj.value(trial, meter);
    } catch (const NonFiniteError&) {
      continue;  // overshoot into overflow: keep shrinking
    }
    if (v <= value_at_phi + options.armijo * t * slope) {
      r.step = t;
      r.value = v;
      r.accepted = true;
      return r;
    }
  }
  return r;
}

SolveResult solve_gd(const InnerObjective& obj, const Vector& init,
                     const InnerBudget& budget, MemoryMeter* meter) {
  validate(budget);
  check_init(obj, init);
  SolveResult r;
  r.phi = init;
  for (int k = 0;; ++k) {
    const Vector g = gradient_at(obj, r.phi, meter, k, "gradient descent");
    ++r.gradient_evals;
    r.grad_norm = g.norm();
    if (k == 0) r.initial_grad_norm = r.grad_norm;
    if (k == budget.steps || reached_target(budget, r.grad_norm)) {
      r.iterations = k;
      break;
    }
    r.phi -= budget.lr * g;
    require_finite(r.phi, k + 1, "gradient descent");
  }
  finish(r, budget);
  return r;
}

SolveResult solve_agd(const InnerObjective& obj, const Vector& init,
                      const InnerBudget& budget, MemoryMeter* meter) {
  validate(budget);
  check_init(obj, init);
  const double mu = *budget.mu;
  const double beta = *budget.beta;
  const double sqrt_kappa = std::sqrt(beta / mu);
  const double momentum = (sqrt_kappa - 1.0) / (sqrt_kappa + 1.0);

  SolveResult r;
  Vector x = init;
  Vector x_prev = init;
  for (int k = 0;; ++k) {
    if (k == budget.steps) {
      const Vector g = gradient_at(obj, x, meter, k, "accelerated gradient descent");
      ++r.gradient_evals;
      r.grad_norm = g.norm();
      if (k == 0) r.initial_grad_norm = r.grad_norm;
      r.phi = x;
      r.iterations = k;
      break;
    }
    const Vector y = x + momentum * (x - x_prev);
    const Vector g = gradient_at(obj, y, meter, k, "accelerated gradient descent");
    ++r.gradient_evals;
    const double gn = g.norm();
    if (k == 0) r.initial_grad_norm = gn;
    if (reached_target(budget, gn)) {
      r.grad_norm = gn;
      r.phi = y;
      r.iterations = k;
      break;
    }
    x_prev = x;
    x = y - g / beta;
    require_finite(x, k + 1, "accelerated gradient descent");
  }
  finish(r, budget);
  return r;
}

SolveResult solve_newton_cg(const InnerObjective& obj, const Vector& init,
                            const InnerBudget& budget, MemoryMeter* meter) {
  validate(budget);
  check_init(obj, init);
  const double lambda = obj.lambda();
  SolveResult r;
  r.phi = init;
  double tol = 0.0;
  for (int rep = 0;; ++rep) {
    Tape tape = obj.train().record(r.phi, meter);
    const double value =
        tape.value() + 0.5 * lambda * (r.phi - obj.theta()).squaredNorm();
    ++r.function_evals;
    const Vector g = tape.gradient() + lambda * (r.phi - obj.theta());
    ++r.gradient_evals;
    r.grad_norm = g.norm();
    if (rep == 0) {
      r.initial_grad_norm = r.grad_norm;
      tol = 1e-12 * std::max(1.0, r.grad_norm);
    }
    if (rep == budget.newton_reps || r.grad_norm <= tol ||
        reached_target(budget, r.grad_norm)) {
      r.iterations = rep;
      break;
    }

    LinearOperator hess{obj.dim(), [&](const Vector& v) -> Vector {
                          return tape.hvp(v) + lambda * v;
                        }};
    CGOptions cg;
    cg.max_iters = budget.cg_steps;
    cg.residual_tol = 1e-10 * r.grad_norm;
    cg.truncate_on_negative_curvature = true;
    const CGResult dir = cg_solve(hess, -g, cg);
    r.hvps += dir.matvecs;
    Vector d = dir.solution;
    if (dir.iterations == 0 || !(g.dot(d) < 0.0)) d = -g;

    const LineSearchResult ls =
        line_search(obj, r.phi, value, d, g, budget.line_search, meter);
    r.function_evals += static_cast<std::size_t>(ls.evaluations);
    if (!ls.accepted) {
      r.line_search_failed = true;
      r.iterations = rep;
      break;
    }
    r.phi += ls.step * d;
    require_finite(r.phi, rep + 1, "newton-cg");
  }
  finish(r, budget);
  return r;
}

SolveResult solve_inner(const InnerObjective& obj, const InnerBudget& budget,
                        MemoryMeter* meter) {
  switch (budget.method) {
    case InnerMethod::kGd: return solve_gd(obj, obj.theta(), budget, meter);
    case InnerMethod::kAgd: return solve_agd(obj, obj.theta(), budget, meter);
    case InnerMethod::kNewtonCg:
      return solve_newton_cg(obj, obj.theta(), budget, meter);
  }
  throw ConfigError("unknown inner solver");
}

}  // namespace imaml
