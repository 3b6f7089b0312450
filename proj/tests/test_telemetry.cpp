#include <algorithm>
#include <cmath>
#include <string>

#include <gtest/gtest.h>

#include "imaml/errors.hpp"
#include "imaml/exact_oracle.hpp"
#include "imaml/telemetry.hpp"
#include "oracles.hpp"

namespace {

using namespace imaml;

CostLedger ledger(std::size_t g, std::size_t h, std::size_t mem, const std::string& method) {
  CostLedger l;
  l.grad_evals = g;
  l.hvps = h;
  l.peak_memory = mem;
  l.method = Coord<std::string>::of(method);
  return l;
}

CompareSpec quadratic_spec(Index d, double kappa, std::size_t count) {
  TaskDistribution dist;
  dist.dim = d;
  dist.kappa = kappa;
  CompareSpec s;
  s.model = Model::quadratic(d);
  s.tasks = sample_tasks(dist, count, 5);
  s.theta = oracles::random_vector(d, 6);
  s.lambda = 5.0;
  s.inner.lr = 2.0 / (2.0 * s.lambda + 1.0 + kappa);
  s.kappa = kappa;
  return s;
}

TEST(Telemetry, MergeWithEmptyIsIdentity) {
  const CostLedger x = ledger(3, 4, 10, "imaml");
  EXPECT_EQ(merge(x, CostLedger{}), x);
  EXPECT_EQ(merge(CostLedger{}, x), x);
}

TEST(Telemetry, MergeIsCommutative) {
  const CostLedger a = ledger(3, 4, 10, "imaml");
  const CostLedger b = ledger(5, 0, 7, "maml");
  EXPECT_EQ(merge(a, b), merge(b, a));
}

TEST(Telemetry, MergeSumsCountersAndTakesPeakMax) {
  const CostLedger m =
      merge({ledger(1, 2, 5, "imaml"), ledger(10, 20, 9, "imaml"), ledger(100, 200, 3, "imaml")});
  EXPECT_EQ(m.grad_evals, 111u);
  EXPECT_EQ(m.hvps, 222u);
  EXPECT_EQ(m.peak_memory, 9u);
  EXPECT_TRUE(m.method.has_value());
  EXPECT_EQ(m.method.value, "imaml");
}

TEST(Telemetry, ConflictingCoordinatesAreFlagged) {
  const CostLedger m = merge(ledger(1, 0, 1, "imaml"), ledger(1, 0, 1, "maml"));
  EXPECT_EQ(m.method.state, Coord<std::string>::State::kConflict);
  EXPECT_EQ(to_json(m).at("method"), "mixed");
}

TEST(Telemetry, CompareRowCountEqualsGridSize) {
  CompareSpec s = quadratic_spec(10, 10.0, 2);
  s.grid.inner_steps = {5, 10};
  s.grid.cg_steps = {0, 2, 5};
  const auto rows = compare_methods(s);
  EXPECT_EQ(rows.size(), s.grid.cells());
  EXPECT_EQ(s.grid.cells(), 2u * (3u + 3u));
}

TEST(Telemetry, ZeroCgCellEqualsFomamlCell) {
  CompareSpec s = quadratic_spec(10, 10.0, 2);
  s.grid.inner_steps = {8};
  s.grid.cg_steps = {0};
  const auto rows = compare_methods(s);
  const CompareRow* imaml = nullptr;
  const CompareRow* fomaml = nullptr;
  for (const CompareRow& r : rows) {
    if (r.method == MetaMethod::kImaml) imaml = &r;
    if (r.method == MetaMethod::kFomaml) fomaml = &r;
  }
  ASSERT_NE(imaml, nullptr);
  ASSERT_NE(fomaml, nullptr);
  EXPECT_EQ(imaml->exact_error, fomaml->exact_error);
  EXPECT_EQ(imaml->outer_loss, fomaml->outer_loss);
}

TEST(Telemetry, MamlErrorDecreasesWithUnrollLength) {
  CompareSpec s = quadratic_spec(50, 50.0, 2);
  s.grid.inner_steps = {10, 25, 50, 100};
  s.grid.cg_steps = {5};
  s.grid.fomaml = s.grid.reptile = false;
  double previous = INFINITY;
  for (const CompareRow& r : compare_methods(s)) {
    if (r.method != MetaMethod::kMaml) continue;
    EXPECT_LE(r.exact_error, previous);
    previous = r.exact_error;
  }
}

TEST(Telemetry, MemoryColumnFlatForImamlGrowingForMaml) {
  CompareSpec s = quadratic_spec(10, 10.0, 1);
  s.grid.inner_steps = {4, 16, 64};
  s.grid.cg_steps = {5};
  s.grid.fomaml = s.grid.reptile = false;
  std::size_t imaml_mem = 0, maml_mem = 0;
  for (const CompareRow& r : compare_methods(s)) {
    if (r.method == MetaMethod::kImaml) {
      if (imaml_mem == 0) imaml_mem = r.ledger.peak_memory;
      EXPECT_EQ(r.ledger.peak_memory, imaml_mem);
    } else {
      EXPECT_GT(r.ledger.peak_memory, maml_mem);
      maml_mem = r.ledger.peak_memory;
    }
  }
}

TEST(Telemetry, WorkerCountDoesNotChangeResults) {
  CompareSpec s = quadratic_spec(8, 10.0, 3);
  s.grid.inner_steps = {4, 8};
  s.grid.cg_steps = {1, 5};
  const auto serial = compare_methods(s);
  s.workers = 3;
  const auto parallel = compare_methods(s);
  ASSERT_EQ(serial.size(), parallel.size());
  for (std::size_t i = 0; i < serial.size(); ++i) {
    EXPECT_EQ(serial[i].exact_error, parallel[i].exact_error);
    EXPECT_EQ(serial[i].ledger, parallel[i].ledger);
  }
}

TEST(Telemetry, ApproxErrorOfMamlIsZero) {
  CompareSpec s = quadratic_spec(6, 5.0, 1);
  s.grid.inner_steps = {7};
  s.grid.cg_steps = {5};
  for (const CompareRow& r : compare_methods(s)) {
    ASSERT_TRUE(r.approx_error.has_value());
    if (r.method == MetaMethod::kMaml) {
      EXPECT_LT(*r.approx_error, 1e-12);
    }
  }
}

TEST(Telemetry, UnrolledMetaGradientMatchesDenseOracle) {
  const Task t = make_quadratic_task(5, 6.0, 7);
  const Vector theta = oracles::random_vector(5, 8);
  const QuadraticPayload& p = *t.quadratic;
  const oracles::Unrolled u = oracles::unrolled_gd(p.a, p.b, theta, 2.0, 0.05, 9);
  const Vector want = u.jacobian.transpose() * (p.test_a * u.phi + p.test_b);
  EXPECT_LT(oracles::relative_error(unrolled_gd_meta_gradient(t, theta, 2.0, 0.05, 9), want),
            1e-12);
}

TEST(Telemetry, CsvHasOneFieldPerHeaderColumn) {
  CompareSpec s = quadratic_spec(4, 3.0, 1);
  s.grid.inner_steps = {3};
  s.grid.cg_steps = {2};
  const std::string header = compare_csv_header();
  const auto columns = std::count(header.begin(), header.end(), ',');
  for (const CompareRow& r : compare_methods(s)) {
    const std::string line = to_csv_line(r);
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), columns);
    EXPECT_EQ(to_json(r).at("inner_steps"), 3);
  }
}

TEST(Telemetry, InvalidGridIsRejected) {
  SweepGrid g;
  g.inner_steps = {};
  EXPECT_THROW(validate(g), ConfigError);
  g.inner_steps = {-1};
  EXPECT_THROW(validate(g), ConfigError);
}

}  // namespace
