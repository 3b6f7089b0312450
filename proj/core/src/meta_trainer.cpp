#include "imaml/meta_trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <utility>

#include <nlohmann/json.hpp>

#include "format.hpp"
#include "imaml/errors.hpp"
#include "imaml/inner_solvers.hpp"
#include "parallel.hpp"
#include "rng.hpp"

namespace imaml {

std::string to_string(OuterOptimizer o) {
  return o == OuterOptimizer::kSgd ? "sgd" : "adam";
}

OuterOptimizer outer_optimizer_from_string(const std::string& s) {
  if (s == "sgd") return OuterOptimizer::kSgd;
  if (s == "adam") return OuterOptimizer::kAdam;
  throw ConfigError("unsupported outer optimizer '" + s + "'");
}

void validate(const OuterOptions& o) {
  if (!(o.lr > 0.0)) throw ConfigError("outer learning rate must be positive");
  if (o.iterations < 0) throw ConfigError("outer iterations must be >= 0");
  if (o.batch_size < 1) throw ConfigError("outer batch size must be >= 1");
  if (o.grad_tol && !(*o.grad_tol > 0.0)) throw ConfigError("grad_tol must be positive");
  if (!(o.beta1 >= 0.0 && o.beta1 < 1.0)) throw ConfigError("adam beta1 must be in [0, 1)");
  if (!(o.beta2 >= 0.0 && o.beta2 < 1.0)) throw ConfigError("adam beta2 must be in [0, 1)");
  if (!(o.eps > 0.0)) throw ConfigError("adam eps must be positive");
}

std::string metrics_csv_preamble(const std::string& config_hash, std::uint64_t seed) {
  return "# config_hash=" + config_hash + " seed=" + std::to_string(seed) +
         "\niter,outer_loss,grad_norm,grad_evals_cum,hvps_cum,peak_mem_proxy,wall_ms\n";
}

std::string to_csv_line(const MetricsRow& row) {
  return std::to_string(row.iter) + ',' + detail::format_double(row.outer_loss) +
         ',' + detail::format_double(row.grad_norm) + ',' +
         std::to_string(row.grad_evals_cum) + ',' + std::to_string(row.hvps_cum) +
         ',' + std::to_string(row.peak_mem_proxy) + ',' +
         detail::format_double(row.wall_ms);
}

OuterState outer_step(const OuterState& state, const Model& model,
                      const std::vector<Task>& batch, const EngineSpec& engine,
                      const OuterOptions& outer, int workers, StepInfo* info) {
  if (batch.empty()) throw ConfigError("outer step needs a nonempty task batch");
  validate(outer);
  validate(engine);
  const auto start = std::chrono::steady_clock::now();

  std::vector<MetaGradReport> reports(batch.size());
  detail::parallel_for(batch.size(), workers, [&](std::size_t i) {
    try {
      reports[i] = meta_gradient(engine, bind_task(model, batch[i]), state.theta);
    } catch (const std::exception& e) {
      throw TaskError("task " + std::to_string(batch[i].id) + ": " + e.what(),
                      batch[i].id);
    }
  });

  // Running means, so a batch of identical tasks averages to exactly the
  // single-task value.
  Vector g_hat = reports[0].g;
  double loss = reports[0].outer_loss;
  std::size_t peak = reports[0].peak_memory;
  OuterState next = state;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const MetaGradReport& r = reports[i];
    if (i > 0) {
      const double k = static_cast<double>(i + 1);
      g_hat += (r.g - g_hat) / k;
      loss += (r.outer_loss - loss) / k;
      peak = std::max(peak, r.peak_memory);
    }
    next.grad_evals += r.grad_evals;
    next.hvps += r.hvps;
    ++next.engine_calls;
  }

  if (outer.optimizer == OuterOptimizer::kSgd) {
    next.theta -= outer.lr * g_hat;
  } else {
    if (next.m.size() != g_hat.size()) next.m = Vector::Zero(g_hat.size());
    if (next.v.size() != g_hat.size()) next.v = Vector::Zero(g_hat.size());
    const double t = static_cast<double>(state.iteration + 1);
    next.m = outer.beta1 * next.m + (1.0 - outer.beta1) * g_hat;
    next.v = outer.beta2 * next.v + (1.0 - outer.beta2) * g_hat.cwiseAbs2();
    const double c1 = 1.0 - std::pow(outer.beta1, t);
    const double c2 = 1.0 - std::pow(outer.beta2, t);
    next.theta.array() -= outer.lr * (next.m.array() / c1) /
                          ((next.v.array() / c2).sqrt() + outer.eps);
  }
  if (!next.theta.allFinite()) {
    throw DivergenceError("outer update produced a non-finite theta at iteration " +
                          std::to_string(state.iteration + 1));
  }
  next.iteration = state.iteration + 1;
  next.outer_loss = loss;
  next.grad_norm = g_hat.norm();

  if (info != nullptr) {
    info->row.iter = next.iteration;
    info->row.outer_loss = loss;
    info->row.grad_norm = next.grad_norm;
    info->row.grad_evals_cum = next.grad_evals;
    info->row.hvps_cum = next.hvps;
    info->row.peak_mem_proxy = peak;
    info->row.wall_ms =
        outer.record_wall_time
            ? std::chrono::duration<double, std::milli>(
                  std::chrono::steady_clock::now() - start)
                  .count()
            : 0.0;
    info->g_hat = std::move(g_hat);
  }
  return next;
}

// ---------------------------------------------------------------------------
// Trainer

namespace {

constexpr std::uint64_t kPoolStream = 0x504F4F4CULL;    // meta-train pool
constexpr std::uint64_t kFreshStream = 0x46524553ULL;   // fresh batches
constexpr std::uint64_t kBatchStream = 0x42415443ULL;   // pool subsampling

}  // namespace

MetaTrainer::MetaTrainer(TrainerConfig config) : config_(std::move(config)) {
  validate(config_.model);
  validate(config_.tasks);
  validate(config_.engine);
  validate(config_.outer);
  if (config_.workers < 1) throw ConfigError("workers must be >= 1");
  if (config_.model.kind == ModelKind::kQuadratic &&
      config_.model.dim() != config_.tasks.dim) {
    throw ConfigError("quadratic model dimension must equal the task dimension");
  }
  state_.theta = config_.initial_theta ? *config_.initial_theta
                                       : initial_params(config_.model, config_.seed);
  if (state_.theta.size() != config_.model.dim()) {
    throw DimensionError("initial theta has " + std::to_string(state_.theta.size()) +
                         " entries, model expects " +
                         std::to_string(config_.model.dim()));
  }
  if (config_.outer.optimizer == OuterOptimizer::kAdam) {
    state_.m = Vector::Zero(state_.theta.size());
    state_.v = Vector::Zero(state_.theta.size());
  }
  if (config_.meta_train_tasks > 0) {
    pool_ = sample_tasks(config_.tasks, config_.meta_train_tasks,
                         mix_seed(config_.seed, kPoolStream));
  }
}

std::vector<Task> MetaTrainer::batch_for(std::int64_t iter) const {
  const std::size_t b = config_.outer.batch_size;
  const auto it = static_cast<std::uint64_t>(iter);
  if (pool_.empty()) {
    return sample_tasks(config_.tasks, b,
                        mix_seed(mix_seed(config_.seed, kFreshStream), it));
  }
  if (b >= pool_.size()) return pool_;
  std::vector<std::size_t> idx(pool_.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(mix_seed(mix_seed(config_.seed, kBatchStream), it));
  std::vector<Task> out;
  out.reserve(b);
  for (std::size_t k = 0; k < b; ++k) {
    const std::size_t j = k + static_cast<std::size_t>(rng.below(idx.size() - k));
    std::swap(idx[k], idx[j]);
    out.push_back(pool_[idx[k]]);
  }
  return out;
}

MetricsRow MetaTrainer::step() {
  StepInfo info;
  state_ = outer_step(state_, config_.model, batch_for(state_.iteration),
                      config_.engine, config_.outer, config_.workers, &info);
  return info.row;
}

bool MetaTrainer::done() const {
  if (state_.iteration >= config_.outer.iterations) return true;
  return config_.outer.grad_tol && state_.iteration > 0 &&
         state_.grad_norm <= *config_.outer.grad_tol;
}

std::vector<MetricsRow> MetaTrainer::run(const Observer& observer) {
  std::vector<MetricsRow> rows;
  while (!done()) {
    rows.push_back(step());
    if (observer && !observer(state_, rows.back())) break;
  }
  return rows;
}

void MetaTrainer::restore(const Checkpoint& c) {
  if (c.state.theta.size() != config_.model.dim()) {
    throw CheckpointError("checkpoint theta has " +
                          std::to_string(c.state.theta.size()) +
                          " entries, model expects " +
                          std::to_string(config_.model.dim()));
  }
  if (c.optimizer != config_.outer.optimizer) {
    throw CheckpointError("checkpoint was written with optimizer " +
                          to_string(c.optimizer) + ", config uses " +
                          to_string(config_.outer.optimizer));
  }
  state_ = c.state;
}

Checkpoint MetaTrainer::checkpoint() const {
  Checkpoint c;
  c.config_hash = config_.config_hash;
  c.seed = config_.seed;
  c.optimizer = config_.outer.optimizer;
  c.state = state_;
  return c;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr const char* kMagic = "IMAMLCKPT\n";

void append_doubles(std::string& out, const Vector& v) {
  for (Index i = 0; i < v.size(); ++i) {
    std::uint64_t bits = 0;
    const double x = v(i);
    std::memcpy(&bits, &x, sizeof bits);
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
  }
}

Vector read_doubles(const std::string& in, std::size_t& pos, Index n) {
  Vector v(n);
  for (Index i = 0; i < n; ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) {
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + b])) << (8 * b);
    }
    pos += 8;
    double x = 0.0;
    std::memcpy(&x, &bits, sizeof x);
    v(i) = x;
  }
  return v;
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& c) {
  const OuterState& s = c.state;
  const bool adam = c.optimizer == OuterOptimizer::kAdam;
  if (adam && (s.m.size() != s.theta.size() || s.v.size() != s.theta.size())) {
    throw CheckpointError("adam checkpoint needs moment vectors of theta's size");
  }
  nlohmann::json h;
  h["format"] = "imaml-checkpoint";
  h["version"] = c.format_version;
  h["config_hash"] = c.config_hash;
  h["seed"] = c.seed;
  h["iteration"] = s.iteration;
  h["dim"] = s.theta.size();
  h["optimizer"] = to_string(c.optimizer);
  h["arrays"] = adam ? nlohmann::json{"theta", "adam_m", "adam_v"}
                     : nlohmann::json{"theta"};
  h["outer_loss"] = s.outer_loss;
  h["grad_norm"] = s.grad_norm;
  h["grad_evals"] = s.grad_evals;
  h["hvps"] = s.hvps;
  h["engine_calls"] = s.engine_calls;
  std::string out = kMagic;
  out += h.dump();
  out += '\n';
  append_doubles(out, s.theta);
  if (adam) {
    append_doubles(out, s.m);
    append_doubles(out, s.v);
  }
  return out;
}

Checkpoint parse_checkpoint(const std::string& bytes,
                            const std::optional<std::string>& expected_hash) {
  const std::string magic = kMagic;
  if (bytes.compare(0, magic.size(), magic) != 0) {
    throw CheckpointError("not a checkpoint file (bad magic)");
  }
  const std::size_t eol = bytes.find('\n', magic.size());
  if (eol == std::string::npos) throw CheckpointError("corrupt checkpoint: no header line");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(bytes.substr(magic.size(), eol - magic.size()));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
  }
  Checkpoint c;
  try {
    if (h.at("format").get<std::string>() != "imaml-checkpoint") {
      throw CheckpointError("unknown checkpoint format");
    }
    c.format_version = h.at("version").get<int>();
    if (c.format_version != Checkpoint::kFormatVersion) {
      throw CheckpointError("checkpoint format version " +
                            std::to_string(c.format_version) + " is not supported (expected " +
                            std::to_string(Checkpoint::kFormatVersion) + ")");
    }
    c.config_hash = h.at("config_hash").get<std::string>();
    c.seed = h.at("seed").get<std::uint64_t>();
    c.optimizer = outer_optimizer_from_string(h.at("optimizer").get<std::string>());
    c.state.iteration = h.at("iteration").get<std::int64_t>();
    c.state.outer_loss = h.at("outer_loss").get<double>();
    c.state.grad_norm = h.at("grad_norm").get<double>();
    c.state.grad_evals = h.at("grad_evals").get<std::uint64_t>();
    c.state.hvps = h.at("hvps").get<std::uint64_t>();
    c.state.engine_calls = h.at("engine_calls").get<std::uint64_t>();
    const auto dim = h.at("dim").get<Index>();
    const std::size_t arrays = h.at("arrays").size();
    const bool adam = c.optimizer == OuterOptimizer::kAdam;
    if (dim < 0 || arrays != (adam ? 3U : 1U)) {
      throw CheckpointError("corrupt checkpoint: inconsistent header");
    }
    std::size_t pos = eol + 1;
    if (bytes.size() - pos != arrays * 8 * static_cast<std::size_t>(dim)) {
      throw CheckpointError("corrupt checkpoint: payload has " +
                            std::to_string(bytes.size() - pos) + " bytes, expected " +
                            std::to_string(arrays * 8 * static_cast<std::size_t>(dim)));
    }
    c.state.theta = read_doubles(bytes, pos, dim);
    if (adam) {
      c.state.m = read_doubles(bytes, pos, dim);
      c.state.v = read_doubles(bytes, pos, dim);
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
  }
  c.config_mismatch = expected_hash.has_value() && *expected_hash != c.config_hash;
  return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& c) {
  const std::string bytes = serialize_checkpoint(c);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError("cannot open '" + path + "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw CheckpointError("failed writing '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path,
                           const std::optional<std::string>& expected_hash) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_checkpoint(ss.str(), expected_hash);
}

// ---------------------------------------------------------------------------
// Meta-test evaluation

std::vector<TaskScore> evaluate_meta_test(const Model& model, const Vector& theta,
                                          const std::vector<Task>& tasks,
                                          double lambda, const InnerBudget& inner,
                                          int workers) {
  validate(inner);
  std::vector<TaskScore> scores(tasks.size());
  const bool classify =
      model.kind != ModelKind::kQuadratic && model.loss == LossKind::kCrossEntropy;
  detail::parallel_for(tasks.size(), workers, [&](std::size_t i) {
    const TaskLosses losses = bind_task(model, tasks[i]);
    const InnerObjective obj(losses.train, theta, lambda);
    const SolveResult r = solve_inner(obj, inner);
    scores[i].task_id = tasks[i].id;
    scores[i].test_loss = losses.test.value(r.phi);
    if (classify) scores[i].accuracy = accuracy(model, r.phi, tasks[i].test);
  });
  return scores;
}

double mean_test_loss(const std::vector<TaskScore>& scores) {
  if (scores.empty()) return 0.0;
  double sum = 0.0;
  for (const TaskScore& s : scores) sum += s.test_loss;
  return sum / static_cast<double>(scores.size());
}

}  // namespace imaml
