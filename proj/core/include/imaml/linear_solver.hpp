#pragma once

// Matrix-free conjugate gradient for symmetric positive-definite systems.

#include <cstddef>
#include <functional>

#include "imaml/types.hpp"

namespace imaml {

// v -> M v. Must be linear and symmetric; callers back it with HVPs.
struct LinearOperator {
  Index dim = 0;
  std::function<Vector(const Vector&)> apply;
};

struct CGOptions {
  int max_iters = 5;
  double residual_tol = 1e-10;
  // When set, p^T M p <= 0 stops the iteration and flags the result instead
  // of throwing; the iterate built so far is returned.
  bool truncate_on_negative_curvature = false;
};

struct CGResult {
  Vector solution;
  int iterations = 0;
  double residual_norm = 0.0;  // ||rhs - M w|| by the CG recurrence
  std::size_t matvecs = 0;
  bool negative_curvature = false;
};

// Plain CG from w0 = 0. Stops after max_iters or once the residual norm is
// <= residual_tol. Throws CurvatureError on p^T M p <= 0 unless truncation is
// requested.
CGResult cg_solve(const LinearOperator& op, const Vector& rhs,
                  const CGOptions& options);

}  // namespace imaml
