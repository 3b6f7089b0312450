#pragma once

// The outer loop: sample a batch of tasks, average their meta-gradients,
// update theta with gradient descent or Adam; plus meta-test evaluation,
// binary checkpoints and the per-iteration metrics log.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "imaml/meta_gradient.hpp"
#include "imaml/models.hpp"
#include "imaml/tasks.hpp"
#include "imaml/types.hpp"

namespace imaml {

enum class OuterOptimizer { kSgd, kAdam };

std::string to_string(OuterOptimizer o);
OuterOptimizer outer_optimizer_from_string(const std::string& s);

struct OuterOptions {
  OuterOptimizer optimizer = OuterOptimizer::kSgd;
  double lr = 0.1;                 // eta
  int iterations = 100;
  std::size_t batch_size = 4;
  std::optional<double> grad_tol;  // stop once ||g_hat|| <= grad_tol
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Off by default so the metrics log is byte-deterministic.
  bool record_wall_time = false;
};

void validate(const OuterOptions& o);

struct OuterState {
  Vector theta;
  std::int64_t iteration = 0;
  Vector m;  // Adam first moment (empty for sgd)
  Vector v;  // Adam second moment (empty for sgd)
  double outer_loss = 0.0;
  double grad_norm = 0.0;
  std::uint64_t grad_evals = 0;    // cumulative
  std::uint64_t hvps = 0;          // cumulative
  std::uint64_t engine_calls = 0;  // cumulative per-task meta-gradients
};

struct MetricsRow {
  std::int64_t iter = 0;
  double outer_loss = 0.0;
  double grad_norm = 0.0;
  std::uint64_t grad_evals_cum = 0;
  std::uint64_t hvps_cum = 0;
  std::size_t peak_mem_proxy = 0;
  double wall_ms = 0.0;
};

// "# config_hash=<hash> seed=<seed>" followed by the column header.
std::string metrics_csv_preamble(const std::string& config_hash, std::uint64_t seed);
std::string to_csv_line(const MetricsRow& row);

struct StepInfo {
  Vector g_hat;
  MetricsRow row;
};

// One outer update on an explicit batch. Per-task meta-gradients are
// computed on up to `workers` threads and summed in batch order, so the
// result does not depend on the worker count. Throws TaskError naming the
// first failing task.
OuterState outer_step(const OuterState& state, const Model& model,
                      const std::vector<Task>& batch, const EngineSpec& engine,
                      const OuterOptions& outer, int workers = 1,
                      StepInfo* info = nullptr);

struct TrainerConfig {
  Model model;
  TaskDistribution tasks;
  // Size of the fixed meta-train pool; 0 draws a fresh batch every step.
  std::size_t meta_train_tasks = 0;
  EngineSpec engine;
  OuterOptions outer;
  std::uint64_t seed = 0;
  int workers = 1;
  std::string config_hash;
  // Starting point; defaults to initial_params(model, seed).
  std::optional<Vector> initial_theta;
};

struct Checkpoint {
  static constexpr int kFormatVersion = 1;
  int format_version = kFormatVersion;
  std::string config_hash;
  std::uint64_t seed = 0;
  OuterOptimizer optimizer = OuterOptimizer::kSgd;
  OuterState state;
  // Set by load_checkpoint when an expected hash was given and differs.
  bool config_mismatch = false;
};

// Layout: the line "IMAMLCKPT", one line of JSON header, then theta (and
// the Adam moments) as little-endian IEEE-754 doubles.
std::string serialize_checkpoint(const Checkpoint& c);
Checkpoint parse_checkpoint(const std::string& bytes,
                            const std::optional<std::string>& expected_hash = {});
void save_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::string& path,
                           const std::optional<std::string>& expected_hash = {});

class MetaTrainer {
 public:
  explicit MetaTrainer(TrainerConfig config);

  const TrainerConfig& config() const { return config_; }
  const OuterState& state() const { return state_; }

  // Continues from a checkpoint. Throws CheckpointError on a dimension or
  // optimizer mismatch; a differing config hash only sets the flag.
  void restore(const Checkpoint& c);
  Checkpoint checkpoint() const;

  // Tasks of outer iteration `iter` (0-based); a pure function of the
  // config, the seed and `iter`.
  std::vector<Task> batch_for(std::int64_t iter) const;

  MetricsRow step();

  // Steps until outer.iterations or the gradient tolerance is reached, or
  // the callback returns false.
  using Observer = std::function<bool(const OuterState&, const MetricsRow&)>;
  std::vector<MetricsRow> run(const Observer& observer = {});

  bool done() const;

 private:
  TrainerConfig config_;
  OuterState state_;
  std::vector<Task> pool_;
};

struct TaskScore {
  std::uint64_t task_id = 0;
  double test_loss = 0.0;
  std::optional<double> accuracy;  // cross-entropy models
};

// Adapts theta to every task with the inner solver and scores phi_i on the
// task's test split.
std::vector<TaskScore> evaluate_meta_test(const Model& model, const Vector& theta,
                                          const std::vector<Task>& tasks,
                                          double lambda, const InnerBudget& inner,
                                          int workers = 1);

double mean_test_loss(const std::vector<TaskScore>& scores);

}  // namespace imaml
