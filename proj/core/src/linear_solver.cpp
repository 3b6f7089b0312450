#include "imaml/linear_solver.hpp"

#include <cmath>
#include <string>

#include "imaml/errors.hpp"

namespace imaml {

CGResult cg_solve(const LinearOperator& op, const Vector& rhs,
                  const CGOptions& options) {
  if (rhs.size() != op.dim) {
    throw DimensionError("CG right-hand side has " + std::to_string(rhs.size()) +
                         " entries, operator dimension is " +
                         std::to_string(op.dim));
  }
  if (options.max_iters < 0) throw ConfigError("CG max_iters must be >= 0");
  if (!(options.residual_tol >= 0.0)) throw ConfigError("CG residual_tol must be >= 0");

  CGResult out;
  out.solution = Vector::Zero(op.dim);
  Vector r = rhs;
  Vector p = r;
  double rr = r.squaredNorm();
  out.residual_norm = std::sqrt(rr);

  while (out.iterations < options.max_iters &&
         out.residual_norm > options.residual_tol) {
    const Vector mp = op.apply(p);
    ++out.matvecs;
    if (mp.size() != op.dim) {
      throw DimensionError("linear operator returned a vector of the wrong size");
    }
    const double curvature = p.dot(mp);
    if (!(curvature > 0.0)) {
      if (options.truncate_on_negative_curvature) {
        out.negative_curvature = true;
        break;
      }
      throw CurvatureError(
          "CG met non-positive curvature p^T M p = " + std::to_string(curvature) +
          " at iteration " + std::to_string(out.iterations) +
          "; the system is not positive definite (increase lambda)");
    }
    const double alpha = rr / curvature;
    out.solution += alpha * p;
    r -= alpha * mp;
    const double rr_next = r.squaredNorm();
    p = r + (rr_next / rr) * p;
    rr = rr_next;
    out.residual_norm = std::sqrt(rr);
    ++out.iterations;
  }
  return out;
}

}  // namespace imaml
