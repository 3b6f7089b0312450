#pragma once

// Reference computations for the tests, written directly against Eigen so
// they share no code with the library.

#include <functional>
#include <random>

#include <Eigen/Dense>

namespace oracles {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Seeded vector with entries uniform on [-1, 1].
inline Vec random_vector(Eigen::Index d, unsigned seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Vec v(d);
  for (Eigen::Index i = 0; i < d; ++i) v(i) = u(gen);
  return v;
}

// Central differences of f at x, one coordinate at a time.
inline Vec central_gradient(const std::function<double(const Vec&)>& f, const Vec& x,
                            double h) {
  Vec g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vec up = x, down = x;
    up(i) += h;
    down(i) -= h;
    g(i) = (f(up) - f(down)) / (2.0 * h);
  }
  return g;
}

// Directional difference of a gradient field: (g(x + h v) - g(x - h v)) / 2h.
inline Vec gradient_difference_hvp(const std::function<Vec(const Vec&)>& grad,
                                   const Vec& x, const Vec& v, double h) {
  return (grad(x + h * v) - grad(x - h * v)) / (2.0 * h);
}

// argmin_phi 0.5 phi^T A phi + b^T phi + lambda/2 ||phi - theta||^2.
inline Vec prox_quadratic(const Mat& a, const Vec& b, const Vec& theta, double lambda) {
  Mat m = a;
  m.diagonal().array() += lambda;
  return m.fullPivLu().solve(lambda * theta - b);
}

// d phi*/d theta for the quadratic proximal problem.
inline Mat prox_jacobian(const Mat& a, double lambda) {
  Mat m = a;
  m.diagonal().array() += lambda;
  return lambda * m.fullPivLu().inverse();
}

// d/d theta of L_test(phi*(theta)) with L_test = 0.5 x^T A_t x + b_t^T x.
inline Vec quadratic_meta_gradient(const Mat& a, const Vec& b, const Mat& at,
                                   const Vec& bt, const Vec& theta, double lambda) {
  const Vec phi = prox_quadratic(a, b, theta, lambda);
  return prox_jacobian(a, lambda).transpose() * (at * phi + bt);
}

// K steps of phi <- phi - alpha (A phi + b + lambda (phi - theta)) from
// theta, returning phi_K and d phi_K / d theta.
struct Unrolled {
  Vec phi;
  Mat jacobian;
};

inline Unrolled unrolled_gd(const Mat& a, const Vec& b, const Vec& theta, double lambda,
                            double alpha, int steps) {
  const Eigen::Index d = theta.size();
  const Mat step = Mat::Identity(d, d) - alpha * (a + lambda * Mat::Identity(d, d));
  Vec phi = theta;
  Mat jac = Mat::Identity(d, d);
  for (int k = 0; k < steps; ++k) {
    phi = step * phi + alpha * lambda * theta - alpha * b;
    jac = step * jac + alpha * lambda * Mat::Identity(d, d);
  }
  return {phi, jac};
}

inline double relative_error(const Vec& got, const Vec& want) {
  const double scale = want.norm();
  return scale > 0.0 ? (got - want).norm() / scale : (got - want).norm();
}

inline double relative_error(const Mat& got, const Mat& want) {
  const double scale = want.norm();
  return scale > 0.0 ? (got - want).norm() / scale : (got - want).norm();
}

}  // namespace oracles
