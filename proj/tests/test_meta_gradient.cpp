#include <algorithm>
#include <cmath>
#include <memory>

#include <gtest/gtest.h>

#include "imaml/errors.hpp"
#include "imaml/meta_gradient.hpp"
#include "imaml/models.hpp"
#include "imaml/tasks.hpp"
#include "oracles.hpp"

namespace {

using namespace imaml;

struct Quad {
  Task task;
  TaskLosses losses;
  Vector theta;
};

Quad quad(Index d, double kappa, std::uint64_t seed) {
  Quad q;
  q.task = make_quadratic_task(d, kappa, seed);
  q.losses = bind_task(Model::quadratic(d), q.task);
  q.theta = oracles::random_vector(d, static_cast<unsigned>(seed) + 100);
  return q;
}

InnerBudget gd(int steps, double lr) {
  InnerBudget b;
  b.steps = steps;
  b.lr = lr;
  return b;
}

// Newton-CG with as many CG steps as dimensions: exact on quadratics.
InnerBudget exact_solve(Index d) {
  InnerBudget b;
  b.method = InnerMethod::kNewtonCg;
  b.cg_steps = static_cast<int>(d);
  b.newton_reps = 2;
  return b;
}

// sum_i c_i phi_i: zero Hessian.
BoundLoss linear_loss(const Vector& c) {
  GraphBuilder b(c.size());
  const NodeRef p = b.params();
  const NodeRef k = b.constant(c);
  Graph g = std::move(b).finish(b.dot(k, p));
  return BoundLoss(std::make_shared<const Graph>(std::move(g)), Batch{}, NodeRef{});
}

TEST(MetaGradient, ImamlMatchesDenseImplicitGradient) {
  const Quad q = quad(8, 10.0, 1);
  const double lambda = 2.0;
  CGOptions cg;
  cg.max_iters = 8;
  cg.residual_tol = 0.0;
  const MetaGradReport r =
      imaml_meta_gradient(q.losses, q.theta, lambda, exact_solve(8), cg);
  const QuadraticPayload& p = *q.task.quadratic;
  const Vector want =
      oracles::quadratic_meta_gradient(p.a, p.b, p.test_a, p.test_b, q.theta, lambda);
  EXPECT_LT(oracles::relative_error(r.g, want), 1e-8);
  ASSERT_TRUE(r.cg.has_value());
  EXPECT_EQ(r.hvps, r.inner.hvps + r.cg->matvecs);
}

TEST(MetaGradient, ImamlOnIllConditionedD50Quadratic) {
  const Quad q = quad(50, 50.0, 2);
  const double lambda = 5.0;
  CGOptions cg;
  cg.max_iters = 5;
  const MetaGradReport r = imaml_meta_gradient(
      q.losses, q.theta, lambda, gd(100, 2.0 / (2.0 * lambda + 51.0)), cg);
  const QuadraticPayload& p = *q.task.quadratic;
  const Vector want =
      oracles::quadratic_meta_gradient(p.a, p.b, p.test_a, p.test_b, q.theta, lambda);
  EXPECT_LT(oracles::relative_error(r.g, want), 1e-3);
}

TEST(MetaGradient, ZeroHessianGivesTestGradientInOneIteration) {
  const Vector c = oracles::random_vector(4, 3);
  const BoundLoss loss = linear_loss(c);
  const Vector v = oracles::random_vector(4, 4);
  CGResult diag;
  const Vector g = implicit_meta_gradient_at(loss, Vector::Zero(4), 2.0, v, CGOptions{}, &diag);
  EXPECT_LT((g - v).norm(), 1e-15);
  EXPECT_EQ(diag.iterations, 1);
}

TEST(MetaGradient, ZeroHessianInnerHvpIsLambdaV) {
  const BoundLoss loss = linear_loss(oracles::random_vector(3, 5));
  const InnerObjective g(loss, Vector::Zero(3), 2.0);
  const Vector v = oracles::random_vector(3, 6);
  EXPECT_LT((g.hvp(Vector::Ones(3), v) - 2.0 * v).norm(), 1e-15);
  EXPECT_EQ(g.hvp(Vector::Ones(3), Vector::Zero(3)), Vector::Zero(3));
}

TEST(MetaGradient, FomamlEqualsImamlWithZeroCgBitwise) {
  const Quad q = quad(10, 20.0, 7);
  const InnerBudget b = gd(12, 0.05);
  CGOptions zero;
  zero.max_iters = 0;
  const MetaGradReport a = fomaml_meta_gradient(q.losses, q.theta, 2.0, b);
  const MetaGradReport i = imaml_meta_gradient(q.losses, q.theta, 2.0, b, zero);
  ASSERT_EQ(a.g.size(), i.g.size());
  EXPECT_TRUE(std::equal(a.g.data(), a.g.data() + a.g.size(), i.g.data()));
}

TEST(MetaGradient, FomamlIsLessAccurateThanImaml) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Quad q = quad(50, 50.0, seed);
    const double lambda = 5.0;
    const InnerBudget b = gd(100, 2.0 / (2.0 * lambda + 51.0));
    CGOptions cg;
    cg.max_iters = 5;
    const QuadraticPayload& p = *q.task.quadratic;
    const Vector want =
        oracles::quadratic_meta_gradient(p.a, p.b, p.test_a, p.test_b, q.theta, lambda);
    const double first = oracles::relative_error(
        fomaml_meta_gradient(q.losses, q.theta, lambda, b).g, want);
    const double implicit = oracles::relative_error(
        imaml_meta_gradient(q.losses, q.theta, lambda, b, cg).g, want);
    EXPECT_GT(first, implicit);
  }
}

TEST(MetaGradient, MamlMatchesDenseUnrolledJacobian) {
  const Quad q = quad(6, 8.0, 8);
  const double lambda = 1.5;
  const double alpha = 0.05;
  const QuadraticPayload& p = *q.task.quadratic;
  for (int steps : {0, 1, 7}) {
    const MetaGradReport r = maml_meta_gradient(q.losses, q.theta, lambda, alpha, steps);
    const oracles::Unrolled u = oracles::unrolled_gd(p.a, p.b, q.theta, lambda, alpha, steps);
    const Vector want = u.jacobian.transpose() * (p.test_a * u.phi + p.test_b);
    EXPECT_LT(oracles::relative_error(r.g, want), 1e-12) << "steps " << steps;
    EXPECT_LT((r.phi - u.phi).norm(), 1e-12);
  }
}

TEST(MetaGradient, MamlZeroStepsIsTestGradientAtTheta) {
  const Quad q = quad(5, 3.0, 9);
  const MetaGradReport r = maml_meta_gradient(q.losses, q.theta, 2.0, 0.1, 0);
  EXPECT_EQ(r.g, q.losses.test.gradient(q.theta));
}

TEST(MetaGradient, MamlApproachesExactWithLongUnrolls) {
  const Quad q = quad(10, 10.0, 10);
  const double lambda = 2.0;
  const QuadraticPayload& p = *q.task.quadratic;
  const Vector want =
      oracles::quadratic_meta_gradient(p.a, p.b, p.test_a, p.test_b, q.theta, lambda);
  double previous = INFINITY;
  for (int steps : {2, 5, 10, 20, 40}) {
    const double err = oracles::relative_error(
        maml_meta_gradient(q.losses, q.theta, lambda, 2.0 / (2.0 * lambda + 11.0), steps).g,
        want);
    EXPECT_LT(err, previous);
    previous = err;
  }
  EXPECT_LT(previous, 1e-8);
}

TEST(MetaGradient, ReptileZeroStepsIsZero) {
  const Quad q = quad(4, 3.0, 11);
  const MetaGradReport r = reptile_meta_gradient(q.losses, q.theta, 2.0, gd(0, 0.0));
  EXPECT_EQ(r.g, Vector::Zero(4));
}

TEST(MetaGradient, ReptileIsProximalPointStep) {
  const Quad q = quad(6, 10.0, 12);
  const double lambda = 2.0;
  const MetaGradReport r = reptile_meta_gradient(q.losses, q.theta, lambda, exact_solve(6));
  const QuadraticPayload& p = *q.task.quadratic;
  const Vector star = oracles::prox_quadratic(p.a, p.b, q.theta, lambda);
  EXPECT_LT((r.g - (p.a * star + p.b) / lambda).norm(), 1e-9);
}

TEST(MetaGradient, ReptileParallelsFomamlOnTrainSplit) {
  const Quad q = quad(6, 10.0, 13);
  const TaskLosses on_train{q.losses.train, q.losses.train};
  const double lambda = 3.0;
  const Vector r = reptile_meta_gradient(on_train, q.theta, lambda, exact_solve(6)).g;
  const Vector f = fomaml_meta_gradient(on_train, q.theta, lambda, exact_solve(6)).g;
  const double cosine = std::clamp(r.dot(f) / (r.norm() * f.norm()), -1.0, 1.0);
  EXPECT_LT(std::acos(cosine), 1e-6);
}

TEST(MetaGradient, ZeroTestGradientGivesZeroMetaGradient) {
  Quad q = quad(4, 3.0, 14);
  // Test loss minimized exactly at the adapted point.
  const double lambda = 2.0;
  const QuadraticPayload& p = *q.task.quadratic;
  const Vector star = oracles::prox_quadratic(p.a, p.b, q.theta, lambda);
  q.task.quadratic->test_b = -p.test_a * star;
  q.losses = bind_task(Model::quadratic(4), q.task);
  const MetaGradReport f = fomaml_meta_gradient(q.losses, q.theta, lambda, exact_solve(4));
  EXPECT_LT(f.g.norm(), 1e-10);
}

TEST(MetaGradient, ImamlMemoryIsFlatAndMamlGrows) {
  const Quad q = quad(10, 10.0, 15);
  std::size_t imaml_first = 0, maml_previous = 0;
  for (int steps : {4, 16, 64}) {
    CGOptions cg;
    const MetaGradReport i = imaml_meta_gradient(q.losses, q.theta, 2.0, gd(steps, 0.05), cg);
    const MetaGradReport m = maml_meta_gradient(q.losses, q.theta, 2.0, 0.05, steps);
    if (imaml_first == 0) imaml_first = i.peak_memory;
    EXPECT_EQ(i.peak_memory, imaml_first);
    EXPECT_GT(m.peak_memory, maml_previous);
    maml_previous = m.peak_memory;
  }
}

TEST(MetaGradient, DispatchUsesSpec) {
  const Quad q = quad(5, 4.0, 16);
  EngineSpec spec;
  spec.method = MetaMethod::kMaml;
  spec.lambda = 2.0;
  spec.inner = gd(6, 0.05);
  const MetaGradReport a = meta_gradient(spec, q.losses, q.theta);
  const MetaGradReport b = maml_meta_gradient(q.losses, q.theta, 2.0, 0.05, 6);
  EXPECT_EQ(a.g, b.g);
  EXPECT_EQ(a.method, MetaMethod::kMaml);
  EXPECT_EQ(meta_method_from_string(to_string(MetaMethod::kReptile)), MetaMethod::kReptile);
}

TEST(MetaGradient, ReportSerializes) {
  const Quad q = quad(3, 2.0, 17);
  const MetaGradReport r = imaml_meta_gradient(q.losses, q.theta, 2.0, gd(3, 0.1), CGOptions{});
  const nlohmann::json j = to_json(r);
  EXPECT_EQ(j.at("method"), "imaml");
  EXPECT_EQ(j.at("grad_evals").get<std::size_t>(), r.grad_evals);
}

TEST(MetaGradient, NegativeCurvatureSurfacesAsError) {
  // Train loss with Hessian -3 I: I + H/lambda is indefinite for lambda = 1.
  const Task t = [] {
    Task task;
    task.quadratic = QuadraticPayload{-3.0 * Matrix::Identity(2, 2), Vector::Ones(2),
                                      Matrix::Identity(2, 2), Vector::Ones(2)};
    return task;
  }();
  const TaskLosses l = bind_task(Model::quadratic(2), t);
  CGOptions cg;
  EXPECT_THROW(implicit_meta_gradient_at(l.train, Vector::Zero(2), 1.0, Vector::Ones(2), cg,
                                         nullptr),
               CurvatureError);
  cg.truncate_on_negative_curvature = true;
  const Vector g = implicit_meta_gradient_at(l.train, Vector::Zero(2), 1.0, Vector::Ones(2),
                                             cg, nullptr);
  EXPECT_EQ(g, Vector::Ones(2));
}

}  // namespace
