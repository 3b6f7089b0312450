#include <filesystem>
#include <string>

#include <gtest/gtest.h>

#include "imaml/errors.hpp"
#include "imaml/exact_oracle.hpp"
#include "imaml/meta_trainer.hpp"
#include "oracles.hpp"

namespace {

using namespace imaml;

Task linear_test_task(const Vector& test_b, std::uint64_t id) {
  const Index d = test_b.size();
  Task t;
  t.id = id;
  t.quadratic = QuadraticPayload{Matrix::Zero(d, d), Vector::Zero(d), Matrix::Zero(d, d), test_b};
  return t;
}

EngineSpec imaml_engine(int steps, double lr, int cg_steps) {
  EngineSpec e;
  e.method = MetaMethod::kImaml;
  e.lambda = 2.0;
  e.inner.steps = steps;
  e.inner.lr = lr;
  e.cg.max_iters = cg_steps;
  return e;
}

TrainerConfig quadratic_trainer(OuterOptimizer opt, int iterations) {
  TrainerConfig c;
  c.tasks.dim = 6;
  c.tasks.kappa = 5.0;
  c.model = Model::quadratic(6);
  c.meta_train_tasks = 6;
  c.engine = imaml_engine(30, 2.0 / (2.0 * 2.0 + 6.0), 6);
  c.outer.optimizer = opt;
  c.outer.lr = opt == OuterOptimizer::kAdam ? 0.05 : 0.2;
  c.outer.iterations = iterations;
  c.outer.batch_size = 3;
  c.seed = 9;
  c.config_hash = "abc";
  return c;
}

TEST(MetaTrainer, ZeroMetaGradientsLeaveThetaUnchanged) {
  OuterState s;
  s.theta = oracles::random_vector(3, 1);
  const std::vector<Task> batch = {linear_test_task(Vector::Zero(3), 0),
                                   linear_test_task(Vector::Zero(3), 1)};
  OuterOptions o;
  const OuterState next = outer_step(s, Model::quadratic(3), batch, imaml_engine(3, 0.1, 5), o);
  EXPECT_EQ(next.theta, s.theta);
  EXPECT_EQ(next.iteration, 1);
}

TEST(MetaTrainer, OpposingMetaGradientsCancel) {
  OuterState s;
  s.theta = oracles::random_vector(3, 2);
  const Vector c = oracles::random_vector(3, 3);
  const std::vector<Task> batch = {linear_test_task(c, 0), linear_test_task(-c, 1)};
  StepInfo info;
  const OuterState next =
      outer_step(s, Model::quadratic(3), batch, imaml_engine(3, 0.1, 5), OuterOptions{}, 1, &info);
  EXPECT_EQ(next.theta, s.theta);
  EXPECT_EQ(info.g_hat, Vector::Zero(3));
}

TEST(MetaTrainer, OneStepDecreasesFamilyObjective) {
  TaskDistribution dist;
  dist.dim = 6;
  dist.kappa = 5.0;
  const auto tasks = sample_tasks(dist, 4, 4);
  const QuadraticFamilyObjective f(tasks, 2.0);
  OuterState s;
  s.theta = oracles::random_vector(6, 5);
  OuterOptions o;
  o.lr = 0.5 / f.smoothness();
  const OuterState next = outer_step(s, Model::quadratic(6), tasks,
                                     imaml_engine(200, 2.0 / (4.0 + 6.0), 6), o);
  EXPECT_LT(f.value(next.theta), f.value(s.theta));
}

TEST(MetaTrainer, AdamFirstStepMovesEachCoordinateByLr) {
  OuterState s;
  s.theta = Vector::Zero(2);
  Vector c(2);
  c << 3.0, -0.5;
  OuterOptions o;
  o.optimizer = OuterOptimizer::kAdam;
  o.lr = 0.1;
  const OuterState next =
      outer_step(s, Model::quadratic(2), {linear_test_task(c, 0)}, imaml_engine(0, 0.0, 5), o);
  // |m_hat / (sqrt(v_hat) + eps)| = |g| / (|g| + eps) on the first step.
  EXPECT_NEAR(next.theta(0), -0.1, 1e-8);
  EXPECT_NEAR(next.theta(1), 0.1, 1e-8);
}

TEST(MetaTrainer, FailingTaskIsNamed) {
  Task bad;
  bad.id = 77;
  bad.quadratic = QuadraticPayload{-5.0 * Matrix::Identity(2, 2), Vector::Ones(2),
                                   Matrix::Identity(2, 2), Vector::Ones(2)};
  OuterState s;
  s.theta = Vector::Zero(2);
  try {
    outer_step(s, Model::quadratic(2), {bad}, imaml_engine(0, 0.0, 5), OuterOptions{});
    FAIL() << "expected TaskError";
  } catch (const TaskError& e) {
    EXPECT_EQ(e.task_id(), 77u);
  }
}

TEST(MetaTrainer, WorkerCountDoesNotChangeTrajectory) {
  TrainerConfig c = quadratic_trainer(OuterOptimizer::kSgd, 5);
  MetaTrainer serial(c);
  serial.run();
  c.workers = 3;
  MetaTrainer parallel(c);
  parallel.run();
  EXPECT_EQ(serial.state().theta, parallel.state().theta);
}

TEST(MetaTrainer, BatchesArePureFunctionsOfIteration) {
  const TrainerConfig c = quadratic_trainer(OuterOptimizer::kSgd, 5);
  const MetaTrainer a(c), b(c);
  for (std::int64_t i : {0, 3, 17}) {
    const auto x = a.batch_for(i), y = b.batch_for(i);
    ASSERT_EQ(x.size(), 3u);
    for (std::size_t k = 0; k < x.size(); ++k) EXPECT_EQ(x[k].id, y[k].id);
  }
}

TEST(MetaTrainer, ZeroIterationsCheckpointsInitialTheta) {
  TrainerConfig c = quadratic_trainer(OuterOptimizer::kSgd, 0);
  MetaTrainer t(c);
  EXPECT_TRUE(t.run().empty());
  EXPECT_EQ(t.checkpoint().state.theta, initial_params(c.model, c.seed));
}

TEST(MetaTrainer, CheckpointBytesRoundTrip) {
  MetaTrainer t(quadratic_trainer(OuterOptimizer::kAdam, 4));
  t.run();
  const std::string bytes = serialize_checkpoint(t.checkpoint());
  EXPECT_EQ(serialize_checkpoint(parse_checkpoint(bytes)), bytes);
  const auto path = std::filesystem::temp_directory_path() / "imaml_test_roundtrip.bin";
  save_checkpoint(path.string(), t.checkpoint());
  EXPECT_EQ(serialize_checkpoint(load_checkpoint(path.string())), bytes);
  std::filesystem::remove(path);
}

TEST(MetaTrainer, CorruptCheckpointsAreRejected) {
  MetaTrainer t(quadratic_trainer(OuterOptimizer::kAdam, 1));
  t.run();
  const std::string bytes = serialize_checkpoint(t.checkpoint());
  EXPECT_THROW(parse_checkpoint(bytes.substr(0, bytes.size() - 1)), CheckpointError);
  EXPECT_THROW(parse_checkpoint("NOTACKPT\n{}\n"), CheckpointError);
}

TEST(MetaTrainer, MismatchedHashSetsFlag) {
  MetaTrainer t(quadratic_trainer(OuterOptimizer::kSgd, 1));
  const std::string bytes = serialize_checkpoint(t.checkpoint());
  EXPECT_TRUE(parse_checkpoint(bytes, std::string("other")).config_mismatch);
  EXPECT_FALSE(parse_checkpoint(bytes, std::string("abc")).config_mismatch);
}

TEST(MetaTrainer, ResumeReproducesUninterruptedRun) {
  for (OuterOptimizer opt : {OuterOptimizer::kSgd, OuterOptimizer::kAdam}) {
    const TrainerConfig c = quadratic_trainer(opt, 10);
    MetaTrainer full(c);
    const auto full_rows = full.run();

    MetaTrainer first(c);
    first.run([](const OuterState& s, const MetricsRow&) { return s.iteration < 4; });
    const std::string bytes = serialize_checkpoint(first.checkpoint());
    MetaTrainer second(c);
    second.restore(parse_checkpoint(bytes));
    const auto rest = second.run();
    ASSERT_EQ(rest.size(), 6u);
    EXPECT_EQ(second.state().theta, full.state().theta);
    EXPECT_EQ(to_csv_line(rest.back()), to_csv_line(full_rows.back()));
  }
}

TEST(MetaTrainer, RestoreRejectsWrongOptimizer) {
  MetaTrainer adam(quadratic_trainer(OuterOptimizer::kAdam, 1));
  MetaTrainer sgd(quadratic_trainer(OuterOptimizer::kSgd, 1));
  EXPECT_THROW(sgd.restore(adam.checkpoint()), CheckpointError);
}

TEST(MetaTrainer, EvaluationWithoutAdaptationScoresTheta) {
  TaskDistribution dist;
  dist.dim = 4;
  const auto tasks = sample_tasks(dist, 3, 6);
  const Vector theta = oracles::random_vector(4, 7);
  InnerBudget none;
  none.steps = 0;
  const auto scores = evaluate_meta_test(Model::quadratic(4), theta, tasks, 2.0, none);
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    EXPECT_EQ(scores[i].test_loss, test_loss(Model::quadratic(4), theta, tasks[i]));
  }
}

TEST(MetaTrainer, EvaluationWithExactSolveMatchesOracle) {
  TaskDistribution dist;
  dist.dim = 4;
  const auto tasks = sample_tasks(dist, 3, 8);
  const Vector theta = oracles::random_vector(4, 9);
  InnerBudget exact;
  exact.method = InnerMethod::kNewtonCg;
  exact.cg_steps = 4;
  exact.newton_reps = 2;
  const auto scores = evaluate_meta_test(Model::quadratic(4), theta, tasks, 2.0, exact);
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const QuadraticPayload& p = *tasks[i].quadratic;
    const Vector s = oracles::prox_quadratic(p.a, p.b, theta, 2.0);
    EXPECT_NEAR(scores[i].test_loss, 0.5 * s.dot(p.test_a * s) + p.test_b.dot(s), 1e-10);
  }
}

TEST(MetaTrainer, ClassificationAccuracyIsArgmaxRecount) {
  Model ce = Model::linear(3, 4);
  ce.loss = LossKind::kCrossEntropy;
  const Task t = make_gaussian_classes_task(3, 4, 2, 3, 10);
  const Vector theta = oracles::random_vector(ce.dim(), 11);
  InnerBudget none;
  none.steps = 0;
  const auto scores = evaluate_meta_test(ce, theta, {t}, 1.0, none);
  ASSERT_TRUE(scores[0].accuracy.has_value());
  const Eigen::Map<const Matrix> w(theta.data(), 4, 3);
  const Matrix logits = w * t.test.x;
  int hits = 0;
  for (Index j = 0; j < logits.cols(); ++j) {
    Index pred = 0, label = 0;
    logits.col(j).maxCoeff(&pred);
    t.test.y.col(j).maxCoeff(&label);
    hits += pred == label ? 1 : 0;
  }
  EXPECT_DOUBLE_EQ(*scores[0].accuracy, static_cast<double>(hits) / logits.cols());
  EXPECT_GE(*scores[0].accuracy, 0.0);
  EXPECT_LE(*scores[0].accuracy, 1.0);
}

TEST(MetaTrainer, MetricsPreambleCarriesHashAndSeed) {
  const std::string p = metrics_csv_preamble("deadbeef", 42);
  EXPECT_EQ(p.rfind("# config_hash=deadbeef seed=42\n", 0), 0u);
  EXPECT_NE(p.find("iter,outer_loss,grad_norm"), std::string::npos);
}

}  // namespace
