#pragma once

// Ground truth for quadratic tasks (closed-form inner solutions and
// meta-gradients), dense implicit Jacobians for small models, a central
// finite-difference meta-gradient, and evaluators for the iteration and
// error bounds of the convergence analysis.

#include <cstddef>
#include <functional>
#include <vector>

#include "imaml/models.hpp"
#include "imaml/tasks.hpp"
#include "imaml/types.hpp"

namespace imaml {

// Regularity constants of one task.
//   B: Lipschitz constant of the test loss     L: smoothness of the test loss
//   rho: Hessian-Lipschitz constant of the train loss
//   mu, beta: strong convexity / smoothness of G; kappa = beta / mu
//   D: bound on ||phi*||
struct AnalysisConstants {
  double B = 0.0;
  double L = 0.0;
  double rho = 0.0;
  double mu = 1.0;
  double beta = 1.0;
  double kappa = 1.0;
  double D = 0.0;
  double lambda = 1.0;
};

// Throws ConfigError unless mu > 0, beta >= mu, kappa >= 1 and the rest are
// nonnegative.
void validate(const AnalysisConstants& c);

// Largest dimension the dense routines accept.
inline constexpr Index kDenseDimLimit = 200;

struct ExactMetaGrad {
  Vector meta_gradient;
  Vector phi_star;
};

// phi* = (A + lambda I)^{-1} (lambda theta - b).
Vector exact_inner_solution(const Task& task, const Vector& theta, double lambda);

// lambda (A + lambda I)^{-1} grad L_test(phi*), with
// grad L_test(phi) = A_test phi + b_test.
ExactMetaGrad exact_meta_gradient(const Task& task, const Vector& theta,
                                  double lambda);

// Hessian of a loss assembled column by column from HVPs, symmetrized.
Matrix dense_hessian(const BoundLoss& loss, const Vector& phi);

// (I + H/lambda)^{-1} with H the train-loss Hessian at phi.
Matrix implicit_jacobian_dense(const BoundLoss& train, const Vector& phi,
                               double lambda);

// theta -> L_test(Alg*(theta)) together with the accuracy of the inner
// solves behind it (an upper bound on ||phi - phi*||).
struct OuterPipeline {
  std::function<double(const Vector&)> value;
  double inner_accuracy = 0.0;
};

// The exact pipeline of a quadratic task: closed-form inner solve.
OuterPipeline quadratic_pipeline(const Task& task, double lambda);

struct FiniteDifferenceResult {
  Vector gradient;
  // Set when the inner solves are less accurate than h^2, which swamps the
  // O(h^2) truncation error of the central difference.
  bool accuracy_warning = false;
};

FiniteDifferenceResult finite_difference_meta_gradient(
    const OuterPipeline& pipeline, const Vector& theta, double h);

// ceil(2 sqrt(kappa) log(2 kappa ||x*|| / delta)), clamped at 0. The
// constants' kappa is used.
long lemma2_iteration_bound(const AnalysisConstants& c, double delta,
                            double x_star_norm);

// B1 = 2 lambda rho B / mu^2 + lambda L / mu.
double implicit_gradient_constant(const AnalysisConstants& c);

// B1 delta + delta'. Requires delta < mu / (2 rho) when rho > 0.
double lemma3_error_bound(const AnalysisConstants& c, double delta,
                          double delta_prime);

// Iteration counts that guarantee an eps-accurate meta-gradient:
//   inner: 2 sqrt(kappa) log(8 kappa D (B1/eps + rho/mu))
//   CG:    2 sqrt(kappa) log(4 kappa (lambda/mu) B / eps)
// Both are rounded up and clamped at 0.
long theorem_inner_iterations(const AnalysisConstants& c, double eps);
long theorem_cg_iterations(const AnalysisConstants& c, double eps);

// 4 M L_F (F(0) - min F) / eps^2 meta-gradient calls.
double corollary1_call_bound(std::size_t tasks, double lf, double f0,
                             double f_min, double eps);

// Exact constants of a quadratic task at theta: rho = 0, L = ||A_test||_2,
// mu / beta from the spectrum of A + lambda I, and the local values
// B = ||grad L_test(phi*)||, D = ||phi*||.
AnalysisConstants quadratic_constants(const Task& task, double lambda,
                                      const Vector& theta);

// F(theta) = (1/M) sum_i L_test,i(phi_i*(theta)) over quadratic tasks. F is
// itself quadratic in theta, so its gradient, smoothness and minimizer are
// available in closed form.
class QuadraticFamilyObjective {
 public:
  QuadraticFamilyObjective(const std::vector<Task>& tasks, double lambda);

  Index dim() const { return hessian_.rows(); }
  double value(const Vector& theta) const;
  Vector gradient(const Vector& theta) const;
  // Largest eigenvalue of the Hessian of F.
  double smoothness() const;
  // argmin F; throws SingularSystemError when F is not strictly convex.
  Vector minimizer() const;
  double min_value() const;
  const Matrix& hessian() const { return hessian_; }

 private:
  Matrix hessian_;
  Vector linear_;
  double constant_ = 0.0;
};

}  // namespace imaml
