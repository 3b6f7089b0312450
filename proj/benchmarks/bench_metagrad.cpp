// Wall time and memory proxy of the meta-gradient engines as the inner
// budget grows. Counters report tape slots at peak and HVP counts so the
// constant-memory implicit path can be compared with the unrolled one.

#include <benchmark/benchmark.h>

#include "imaml/inner_solvers.hpp"
#include "imaml/linear_solver.hpp"
#include "imaml/meta_gradient.hpp"
#include "imaml/models.hpp"
#include "imaml/tasks.hpp"

namespace {

using namespace imaml;

constexpr double kLambda = 2.0;

struct SinusoidSetup {
  Model model = Model::mlp(1, {40, 40}, 1);
  Task task = make_sinusoid_task(10, 10, 7);
  TaskLosses losses = bind_task(model, task);
  Vector theta = initial_params(model, 11);
};

InnerBudget gd_budget(int steps) {
  InnerBudget b;
  b.method = InnerMethod::kGd;
  b.steps = steps;
  b.lr = 0.01;
  return b;
}

void report(benchmark::State& state, const MetaGradReport& r) {
  state.counters["peak_mem_proxy"] = static_cast<double>(r.peak_memory);
  state.counters["hvps"] = static_cast<double>(r.hvps);
  state.counters["grad_evals"] = static_cast<double>(r.grad_evals);
}

void BM_Imaml_InnerSteps(benchmark::State& state) {
  SinusoidSetup s;
  const InnerBudget inner = gd_budget(static_cast<int>(state.range(0)));
  CGOptions cg;
  cg.max_iters = 5;
  MetaGradReport r;
  for (auto _ : state) {
    r = imaml_meta_gradient(s.losses, s.theta, kLambda, inner, cg);
    benchmark::DoNotOptimize(r.g.data());
  }
  report(state, r);
}
BENCHMARK(BM_Imaml_InnerSteps)->RangeMultiplier(4)->Range(4, 256)->Unit(benchmark::kMillisecond);

void BM_Maml_InnerSteps(benchmark::State& state) {
  SinusoidSetup s;
  const int steps = static_cast<int>(state.range(0));
  MetaGradReport r;
  for (auto _ : state) {
    r = maml_meta_gradient(s.losses, s.theta, kLambda, 0.01, steps);
    benchmark::DoNotOptimize(r.g.data());
  }
  report(state, r);
}
BENCHMARK(BM_Maml_InnerSteps)->RangeMultiplier(4)->Range(4, 256)->Unit(benchmark::kMillisecond);

void BM_Fomaml_InnerSteps(benchmark::State& state) {
  SinusoidSetup s;
  const InnerBudget inner = gd_budget(static_cast<int>(state.range(0)));
  MetaGradReport r;
  for (auto _ : state) {
    r = fomaml_meta_gradient(s.losses, s.theta, kLambda, inner);
    benchmark::DoNotOptimize(r.g.data());
  }
  report(state, r);
}
BENCHMARK(BM_Fomaml_InnerSteps)->RangeMultiplier(4)->Range(4, 256)->Unit(benchmark::kMillisecond);

void BM_ImplicitSolve_CgSteps(benchmark::State& state) {
  const Task task = make_quadratic_task(50, 50.0, 3);
  const TaskLosses losses = bind_task(Model::quadratic(50), task);
  const Vector phi = Vector::Zero(50);
  const Vector v = Vector::Ones(50);
  CGOptions cg;
  cg.max_iters = static_cast<int>(state.range(0));
  cg.residual_tol = 0.0;
  for (auto _ : state) {
    Vector g = implicit_meta_gradient_at(losses.train, phi, kLambda, v, cg, nullptr);
    benchmark::DoNotOptimize(g.data());
  }
}
BENCHMARK(BM_ImplicitSolve_CgSteps)->DenseRange(0, 20, 5)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
