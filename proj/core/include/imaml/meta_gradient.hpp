#pragma once

// Per-task meta-gradient engines. Every engine works on the proximal inner
// objective G(phi) = L_train(phi) + (lambda/2) ||phi - theta||^2 so that all
// four methods approximate the same bi-level gradient d/dtheta L_test(phi*).

#include <cstddef>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "imaml/autodiff.hpp"
#include "imaml/inner_solvers.hpp"
#include "imaml/linear_solver.hpp"
#include "imaml/models.hpp"
#include "imaml/types.hpp"

namespace imaml {

enum class MetaMethod { kImaml, kMaml, kFomaml, kReptile };

std::string to_string(MetaMethod m);
MetaMethod meta_method_from_string(const std::string& s);

struct MetaGradReport {
  Vector g;
  MetaMethod method = MetaMethod::kImaml;
  SolveResult inner;            // MAML: the unrolled path (gd counters)
  std::optional<CGResult> cg;   // iMAML only
  std::size_t grad_evals = 0;   // inner gradients + the outer (test) gradient
  std::size_t hvps = 0;         // inner-solver HVPs + CG / backprop HVPs
  std::size_t peak_memory = 0;  // peak live tape slots
  double wall_ms = 0.0;
  double outer_loss = 0.0;      // L_test(phi_i)
  Vector phi;                   // adapted parameters phi_i
};

nlohmann::json to_json(const MetaGradReport& r);

// Everything an engine needs apart from the task and theta.
struct EngineSpec {
  MetaMethod method = MetaMethod::kImaml;
  double lambda = 2.0;
  InnerBudget inner;
  CGOptions cg;  // iMAML
};

void validate(const EngineSpec& spec);

// Solves (I + H/lambda) g = v with H the train-loss Hessian at phi, one HVP
// per CG iteration on a single recorded tape. With cg.max_iters == 0 the
// Jacobian is dropped and g = v. When cg truncates on negative curvature
// before its first step, g = v as well.
Vector implicit_meta_gradient_at(const BoundLoss& train, const Vector& phi,
                                 double lambda, const Vector& v,
                                 const CGOptions& cg, CGResult* diagnostics,
                                 MemoryMeter* meter = nullptr);

// Inner solve from theta, v = grad L_test(phi_i), then the CG solve above.
MetaGradReport imaml_meta_gradient(const TaskLosses& task, const Vector& theta,
                                   double lambda, const InnerBudget& inner,
                                   const CGOptions& cg);

// Unrolls phi^{k+1} = phi^k - alpha grad G(phi^k) from phi^0 = theta for
// `steps` steps, keeping every tape, then back-propagates grad L_test(phi^K)
// through the path with one HVP per step.
MetaGradReport maml_meta_gradient(const TaskLosses& task, const Vector& theta,
                                  double lambda, double alpha, int steps);

// g = grad L_test(phi_i).
MetaGradReport fomaml_meta_gradient(const TaskLosses& task, const Vector& theta,
                                    double lambda, const InnerBudget& inner);

// g = theta - phi_i.
MetaGradReport reptile_meta_gradient(const TaskLosses& task, const Vector& theta,
                                     double lambda, const InnerBudget& inner);

// Dispatch on spec.method. MAML uses inner.lr and inner.steps as its step
// size and unroll length.
MetaGradReport meta_gradient(const EngineSpec& spec, const TaskLosses& task,
                             const Vector& theta);

}  // namespace imaml
