#pragma once

// Cost accounting (gradient evaluations, HVPs, peak tape memory) and the
// method-comparison sweep on task families with a known exact meta-gradient.

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "imaml/meta_gradient.hpp"
#include "imaml/models.hpp"
#include "imaml/tasks.hpp"

namespace imaml {

// A ledger coordinate: unset, one agreed value, or a conflict between merged
// ledgers that carried different values.
template <class T>
struct Coord {
  enum class State { kUnset, kValue, kConflict };
  State state = State::kUnset;
  T value{};

  static Coord of(T v) { return Coord{State::kValue, std::move(v)}; }
  bool has_value() const { return state == State::kValue; }

  friend Coord merge(const Coord& a, const Coord& b) {
    if (a.state == State::kUnset) return b;
    if (b.state == State::kUnset) return a;
    if (a.state == State::kValue && b.state == State::kValue && a.value == b.value) {
      return a;
    }
    return Coord{State::kConflict, T{}};
  }
  friend bool operator==(const Coord& a, const Coord& b) {
    return a.state == b.state && (a.state != State::kValue || a.value == b.value);
  }
};

struct CostLedger {
  std::size_t grad_evals = 0;
  std::size_t hvps = 0;
  std::size_t peak_memory = 0;
  double wall_ms = 0.0;
  Coord<std::string> method;
  Coord<int> inner_steps;
  Coord<int> cg_steps;
  Coord<double> kappa;
  Coord<double> lambda;

  static CostLedger of(const MetaGradReport& r);

  // Compares counters, peaks and coordinates; wall time is ignored.
  friend bool operator==(const CostLedger& a, const CostLedger& b) {
    return a.grad_evals == b.grad_evals && a.hvps == b.hvps &&
           a.peak_memory == b.peak_memory && a.method == b.method &&
           a.inner_steps == b.inner_steps && a.cg_steps == b.cg_steps &&
           a.kappa == b.kappa && a.lambda == b.lambda;
  }
};

// Counts and wall time add, peaks take the maximum, coordinates agree or
// become conflicts. Associative and commutative; CostLedger{} is the unit.
CostLedger merge(const CostLedger& a, const CostLedger& b);
CostLedger merge(const std::vector<CostLedger>& ledgers);

nlohmann::json to_json(const CostLedger& l);

struct SweepGrid {
  std::vector<int> inner_steps = {4, 16, 64, 256};
  std::vector<int> cg_steps = {0, 1, 2, 5, 10};
  bool maml = true;
  bool fomaml = true;
  bool reptile = true;

  std::size_t cells() const;
};

void validate(const SweepGrid& grid);

// Exact meta-gradient d/dtheta L_test(phi*(theta)) of one task.
using MetaGradOracle = std::function<Vector(const Task&, const Vector&)>;

struct CompareSpec {
  Model model;
  std::vector<Task> tasks;
  Vector theta;
  double lambda = 5.0;
  // Inner solver used by every engine; `steps` is overridden by the grid.
  // MAML unrolls gradient descent with inner.lr.
  InnerBudget inner;
  double cg_tol = 1e-10;
  SweepGrid grid;
  std::optional<double> kappa;  // recorded in the ledgers only
  int workers = 1;
  // Defaults to the closed form on quadratic tasks.
  MetaGradOracle oracle;
};

struct CompareRow {
  MetaMethod method = MetaMethod::kImaml;
  int inner_steps = 0;
  std::optional<int> cg_steps;  // iMAML only
  // Means over tasks of ||g - exact|| / ||exact|| and ||g - exact||.
  double exact_error = 0.0;
  double exact_error_abs = 0.0;
  // Mean ||g - d/dtheta L_test(Alg(theta))|| / ||.|| for the actual
  // K-step gradient-descent map Alg; set on quadratic tasks with a gd
  // inner solver.
  std::optional<double> approx_error;
  double outer_loss = 0.0;  // mean L_test(phi_i)
  CostLedger ledger;        // merged over tasks
};

// One row per (method, budget) cell, ordered by inner steps, then iMAML by
// CG steps, then MAML, FOMAML, Reptile. Throws OracleUnavailableError when
// no oracle is given and a task has no quadratic payload.
std::vector<CompareRow> compare_methods(const CompareSpec& spec);

// Meta-gradient of the K-step gradient-descent inner map on a quadratic
// task, from the dense path Jacobian J_{k+1} = (I - lr (A + lambda I)) J_k
// + lr lambda I, J_0 = I.
Vector unrolled_gd_meta_gradient(const Task& task, const Vector& theta,
                                 double lambda, double lr, int steps);

std::string compare_csv_header();
std::string to_csv_line(const CompareRow& row);
nlohmann::json to_json(const CompareRow& row);

}  // namespace imaml
