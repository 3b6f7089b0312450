#pragma once

// Approximate solvers for the inner problem argmin_phi G(phi, theta):
// gradient descent, Nesterov's accelerated gradient and Hessian-free
// Newton-CG with a backtracking line search. All of them start from theta
// unless an explicit initial point is supplied.

#include <cstddef>
#include <optional>
#include <string>

#include "imaml/autodiff.hpp"
#include "imaml/models.hpp"
#include "imaml/types.hpp"

namespace imaml {

enum class InnerMethod { kGd, kAgd, kNewtonCg };

std::string to_string(InnerMethod m);
InnerMethod inner_method_from_string(const std::string& s);

struct LineSearchOptions {
  double shrink = 0.5;
  double armijo = 1e-4;
  int max_backtracks = 30;
};

struct InnerBudget {
  InnerMethod method = InnerMethod::kGd;
  int steps = 16;                       // gd / agd iterations
  double lr = 0.0;                      // gd step size; agd uses 1/beta
  int cg_steps = 5;                     // newton-cg: CG iterations per direction
  int newton_reps = 3;                  // newton-cg: direction + line search rounds
  std::optional<double> target_delta;   // stop once ||grad G|| / mu <= delta
  std::optional<double> mu;             // strong convexity of G (agd, delta bound)
  std::optional<double> beta;           // smoothness of G (agd)
  LineSearchOptions line_search;
};

void validate(const InnerBudget& budget);

struct SolveResult {
  Vector phi;
  int iterations = 0;
  double grad_norm = 0.0;          // ||grad G|| at phi
  double initial_grad_norm = 0.0;  // ||grad G|| at the initial point
  std::size_t gradient_evals = 0;
  std::size_t hvps = 0;
  std::size_t function_evals = 0;
  bool line_search_failed = false;
  // ||grad G|| / mu when mu is known: an upper bound on ||phi - phi*||.
  std::optional<double> delta_bound;
};

struct LineSearchResult {
  double step = 0.0;
  double value = 0.0;  // G at phi + step * direction
  int evaluations = 0;
  bool accepted = false;
};

// Backtracking over step in {1, c, c^2, ...} until the Armijo condition
//   G(phi + t d) <= G(phi) + armijo * t * grad^T d
// holds. Throws LineSearchError unless grad^T d < 0.
LineSearchResult line_search(const InnerObjective& obj, const Vector& phi,
                             const Vector& direction, const Vector& grad,
                             const LineSearchOptions& options = {},
                             MemoryMeter* meter = nullptr);
// Same, with G(phi) already known.
LineSearchResult line_search(const InnerObjective& obj, const Vector& phi,
                             double value_at_phi, const Vector& direction,
                             const Vector& grad,
                             const LineSearchOptions& options = {},
                             MemoryMeter* meter = nullptr);

SolveResult solve_gd(const InnerObjective& obj, const Vector& init,
                     const InnerBudget& budget, MemoryMeter* meter = nullptr);
SolveResult solve_agd(const InnerObjective& obj, const Vector& init,
                      const InnerBudget& budget, MemoryMeter* meter = nullptr);
SolveResult solve_newton_cg(const InnerObjective& obj, const Vector& init,
                            const InnerBudget& budget,
                            MemoryMeter* meter = nullptr);

// Dispatches on budget.method, starting from theta.
SolveResult solve_inner(const InnerObjective& obj, const InnerBudget& budget,
                        MemoryMeter* meter = nullptr);

}  // namespace imaml
