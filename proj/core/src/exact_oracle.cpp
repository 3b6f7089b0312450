#include "imaml/exact_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include "imaml/errors.hpp"

namespace imaml {

void validate(const AnalysisConstants& c) {
  if (!(c.mu > 0.0)) throw ConfigError("analysis constant mu must be positive");
  if (!(c.beta >= c.mu)) throw ConfigError("analysis constants need beta >= mu");
  if (!(c.kappa >= 1.0)) throw ConfigError("analysis constant kappa must be >= 1");
  if (!(c.lambda > 0.0)) throw ConfigError("analysis constant lambda must be positive");
  if (!(c.B >= 0.0 && c.L >= 0.0 && c.rho >= 0.0 && c.D >= 0.0)) {
    throw ConfigError("analysis constants B, L, rho, D must be nonnegative");
  }
}

namespace {

const QuadraticPayload& payload(const Task& task) {
  if (!task.quadratic) {
    throw OracleUnavailableError("task " + std::to_string(task.id) +
                                 " has no quadratic payload; no exact oracle");
  }
  const QuadraticPayload& q = *task.quadratic;
  if (q.b.size() > kDenseDimLimit) {
    throw OracleUnavailableError("dense oracle is limited to d <= " +
                                 std::to_string(kDenseDimLimit));
  }
  return q;
}

// Factorization of the symmetric matrix m; throws when it is (numerically)
// singular.
Eigen::PartialPivLU<Matrix> factor(const Matrix& m, const char* what) {
  Eigen::PartialPivLU<Matrix> lu(m);
  const double rc = lu.rcond();
  if (!(rc > 1e-14)) {
    throw SingularSystemError(std::string(what) + " is singular (rcond " +
                              std::to_string(rc) + ")");
  }
  return lu;
}

Matrix shifted(const Matrix& a, double lambda) {
  Matrix m = a;
  m.diagonal().array() += lambda;
  return m;
}

void check_theta(const QuadraticPayload& q, const Vector& theta, double lambda) {
  if (theta.size() != q.b.size()) {
    throw DimensionError("theta has " + std::to_string(theta.size()) +
                         " entries, task dimension is " + std::to_string(q.b.size()));
  }
  if (!(lambda > 0.0)) throw ConfigError("lambda must be positive");
}

long clamp_ceil(double x) {
  if (!(x > 0.0)) return 0;
  return static_cast<long>(std::ceil(x));
}

}  // namespace

Vector exact_inner_solution(const Task& task, const Vector& theta, double lambda) {
  const QuadraticPayload& q = payload(task);
  check_theta(q, theta, lambda);
  return factor(shifted(q.a, lambda), "A + lambda I").solve(lambda * theta - q.b);
}

ExactMetaGrad exact_meta_gradient(const Task& task, const Vector& theta,
                                  double lambda) {
  const QuadraticPayload& q = payload(task);
  check_theta(q, theta, lambda);
  const auto lu = factor(shifted(q.a, lambda), "A + lambda I");
  ExactMetaGrad out;
  out.phi_star = lu.solve(lambda * theta - q.b);
  const Vector v = q.test_a * out.phi_star + q.test_b;
  out.meta_gradient = lambda * lu.solve(v);
  return out;
}

Matrix dense_hessian(const BoundLoss& loss, const Vector& phi) {
  const Index d = phi.size();
  if (d > kDenseDimLimit) {
    throw OracleUnavailableError("dense Hessian is limited to d <= " +
                                 std::to_string(kDenseDimLimit));
  }
  Tape tape = loss.record(phi);
  Matrix h(d, d);
  for (Index j = 0; j < d; ++j) h.col(j) = tape.hvp(Vector::Unit(d, j));
  return 0.5 * (h + h.transpose());
}

Matrix implicit_jacobian_dense(const BoundLoss& train, const Vector& phi,
                               double lambda) {
  if (!(lambda > 0.0)) throw ConfigError("lambda must be positive");
  const Index d = phi.size();
  const Matrix m = Matrix::Identity(d, d) + dense_hessian(train, phi) / lambda;
  return factor(m, "I + H / lambda").inverse();
}

OuterPipeline quadratic_pipeline(const Task& task, double lambda) {
  const QuadraticPayload& q = payload(task);
  const auto lu = factor(shifted(q.a, lambda), "A + lambda I");
  OuterPipeline p;
  p.inner_accuracy = 0.0;
  p.value = [q, lu, lambda](const Vector& theta) {
    const Vector phi = lu.solve(lambda * theta - q.b);
    return 0.5 * phi.dot(q.test_a * phi) + q.test_b.dot(phi);
  };
  return p;
}

FiniteDifferenceResult finite_difference_meta_gradient(
    const OuterPipeline& pipeline, const Vector& theta, double h) {
  if (!(h > 0.0)) throw ConfigError("finite-difference step h must be positive");
  if (!pipeline.value) throw ConfigError("finite-difference pipeline has no value function");
  FiniteDifferenceResult out;
  out.gradient.resize(theta.size());
  out.accuracy_warning = pipeline.inner_accuracy > h * h;
  Vector t = theta;
  for (Index i = 0; i < theta.size(); ++i) {
    t(i) = theta(i) + h;
    const double up = pipeline.value(t);
    t(i) = theta(i) - h;
    const double down = pipeline.value(t);
    t(i) = theta(i);
    out.gradient(i) = (up - down) / (2.0 * h);
  }
  return out;
}

long lemma2_iteration_bound(const AnalysisConstants& c, double delta,
                            double x_star_norm) {
  if (!(delta > 0.0)) throw ConfigError("delta must be positive");
  if (!(c.kappa >= 1.0)) throw ConfigError("kappa must be >= 1");
  if (!(x_star_norm >= 0.0)) throw ConfigError("||x*|| must be nonnegative");
  if (x_star_norm == 0.0) return 0;
  return clamp_ceil(2.0 * std::sqrt(c.kappa) *
                    std::log(2.0 * c.kappa * x_star_norm / delta));
}

double implicit_gradient_constant(const AnalysisConstants& c) {
  validate(c);
  return 2.0 * c.lambda * c.rho * c.B / (c.mu * c.mu) + c.lambda * c.L / c.mu;
}

double lemma3_error_bound(const AnalysisConstants& c, double delta,
                          double delta_prime) {
  validate(c);
  if (!(delta >= 0.0) || !(delta_prime >= 0.0)) {
    throw ConfigError("delta and delta' must be nonnegative");
  }
  if (c.rho > 0.0 && !(delta < c.mu / (2.0 * c.rho))) {
    throw ConfigError("error bound needs delta < mu / (2 rho) = " +
                      std::to_string(c.mu / (2.0 * c.rho)) + " (got delta = " +
                      std::to_string(delta) + ")");
  }
  return implicit_gradient_constant(c) * delta + delta_prime;
}

long theorem_inner_iterations(const AnalysisConstants& c, double eps) {
  if (!(eps > 0.0)) throw ConfigError("eps must be positive");
  const double b1 = implicit_gradient_constant(c);
  return clamp_ceil(2.0 * std::sqrt(c.kappa) *
                    std::log(8.0 * c.kappa * c.D * (b1 / eps + c.rho / c.mu)));
}

long theorem_cg_iterations(const AnalysisConstants& c, double eps) {
  if (!(eps > 0.0)) throw ConfigError("eps must be positive");
  validate(c);
  return clamp_ceil(2.0 * std::sqrt(c.kappa) *
                    std::log(4.0 * c.kappa * (c.lambda / c.mu) * c.B / eps));
}

double corollary1_call_bound(std::size_t tasks, double lf, double f0,
                             double f_min, double eps) {
  if (tasks < 1) throw ConfigError("call bound needs at least one task");
  if (!(eps > 0.0)) throw ConfigError("eps must be positive");
  if (!(lf >= 0.0)) throw ConfigError("L_F must be nonnegative");
  if (!(f0 >= f_min)) throw ConfigError("F(0) must be >= min F");
  return 4.0 * static_cast<double>(tasks) * lf * (f0 - f_min) / (eps * eps);
}

AnalysisConstants quadratic_constants(const Task& task, double lambda,
                                      const Vector& theta) {
  const QuadraticPayload& q = payload(task);
  check_theta(q, theta, lambda);
  const Eigen::SelfAdjointEigenSolver<Matrix> train_eig(q.a, Eigen::EigenvaluesOnly);
  const Eigen::SelfAdjointEigenSolver<Matrix> test_eig(q.test_a, Eigen::EigenvaluesOnly);
  AnalysisConstants c;
  c.lambda = lambda;
  c.rho = 0.0;
  c.mu = lambda + train_eig.eigenvalues().minCoeff();
  c.beta = lambda + train_eig.eigenvalues().maxCoeff();
  if (!(c.mu > 0.0)) {
    throw SingularSystemError("A + lambda I is not positive definite (min eigenvalue " +
                              std::to_string(c.mu) + ")");
  }
  c.kappa = c.beta / c.mu;
  c.L = test_eig.eigenvalues().cwiseAbs().maxCoeff();
  const ExactMetaGrad ex = exact_meta_gradient(task, theta, lambda);
  c.B = (q.test_a * ex.phi_star + q.test_b).norm();
  c.D = ex.phi_star.norm();
  return c;
}

QuadraticFamilyObjective::QuadraticFamilyObjective(const std::vector<Task>& tasks,
                                                   double lambda) {
  if (tasks.empty()) throw ConfigError("task family is empty");
  if (!(lambda > 0.0)) throw ConfigError("lambda must be positive");
  const Index d = payload(tasks.front()).b.size();
  hessian_ = Matrix::Zero(d, d);
  linear_ = Vector::Zero(d);
  const double m = static_cast<double>(tasks.size());
  // phi*(theta) = P theta + c with P = lambda S, c = -S b, S = (A + lambda I)^-1.
  for (const Task& t : tasks) {
    const QuadraticPayload& q = payload(t);
    if (q.b.size() != d) throw DimensionError("tasks of a family must share a dimension");
    const auto lu = factor(shifted(q.a, lambda), "A + lambda I");
    const Matrix p = lambda * lu.inverse();
    const Vector c = -lu.solve(q.b);
    hessian_ += p.transpose() * q.test_a * p / m;
    linear_ += p.transpose() * (q.test_a * c + q.test_b) / m;
    constant_ += (0.5 * c.dot(q.test_a * c) + q.test_b.dot(c)) / m;
  }
  hessian_ = 0.5 * (hessian_ + hessian_.transpose()).eval();
}

double QuadraticFamilyObjective::value(const Vector& theta) const {
  return 0.5 * theta.dot(hessian_ * theta) + linear_.dot(theta) + constant_;
}

Vector QuadraticFamilyObjective::gradient(const Vector& theta) const {
  return hessian_ * theta + linear_;
}

double QuadraticFamilyObjective::smoothness() const {
  const Eigen::SelfAdjointEigenSolver<Matrix> eig(hessian_, Eigen::EigenvaluesOnly);
  return eig.eigenvalues().cwiseAbs().maxCoeff();
}

Vector QuadraticFamilyObjective::minimizer() const {
  const Eigen::LLT<Matrix> llt(hessian_);
  if (llt.info() != Eigen::Success) {
    throw SingularSystemError("meta-objective is not strictly convex");
  }
  return llt.solve(-linear_);
}

double QuadraticFamilyObjective::min_value() const {
  return value(minimizer());
}

}  // namespace imaml
