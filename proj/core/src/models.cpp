#include "imaml/models.hpp"

#include <cmath>
#include <utility>

#include "imaml/errors.hpp"
#include "rng.hpp"

namespace imaml {

std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::kLinear: return "linear";
    case ModelKind::kMlp: return "mlp";
    case ModelKind::kQuadratic: return "quadratic";
  }
  return "?";
}

ModelKind model_kind_from_string(const std::string& s) {
  if (s == "linear") return ModelKind::kLinear;
  if (s == "mlp") return ModelKind::kMlp;
  if (s == "quadratic") return ModelKind::kQuadratic;
  throw ConfigError("unsupported model kind '" + s + "'");
}

std::string to_string(Activation a) {
  return a == Activation::kTanh ? "tanh" : "relu";
}

Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::kTanh;
  if (s == "relu") return Activation::kRelu;
  throw ConfigError("unsupported activation '" + s + "'");
}

std::string to_string(LossKind k) {
  return k == LossKind::kSquaredError ? "squared-error" : "cross-entropy";
}

LossKind loss_kind_from_string(const std::string& s) {
  if (s == "squared-error") return LossKind::kSquaredError;
  if (s == "cross-entropy") return LossKind::kCrossEntropy;
  throw ConfigError("unsupported loss '" + s + "'");
}

Index Model::dim() const {
  switch (kind) {
    case ModelKind::kQuadratic:
      return quadratic_dim;
    case ModelKind::kLinear:
      return input_dim * output_dim;
    case ModelKind::kMlp: {
      Index d = 0;
      Index prev = input_dim;
      for (Index h : hidden) {
        d += h * prev + h;
        prev = h;
      }
      return d + output_dim * prev + output_dim;
    }
  }
  return 0;
}

Model Model::linear(Index input_dim, Index output_dim) {
  Model m;
  m.kind = ModelKind::kLinear;
  m.input_dim = input_dim;
  m.output_dim = output_dim;
  m.hidden.clear();
  return m;
}

Model Model::mlp(Index input_dim, std::vector<Index> hidden, Index output_dim,
                 Activation act, LossKind loss) {
  Model m;
  m.kind = ModelKind::kMlp;
  m.input_dim = input_dim;
  m.output_dim = output_dim;
  m.hidden = std::move(hidden);
  m.activation = act;
  m.loss = loss;
  return m;
}

Model Model::quadratic(Index dim) {
  Model m;
  m.kind = ModelKind::kQuadratic;
  m.quadratic_dim = dim;
  m.hidden.clear();
  return m;
}

void validate(const Model& model) {
  if (model.kind == ModelKind::kQuadratic) {
    if (model.quadratic_dim < 1) throw ConfigError("quadratic model dimension must be >= 1");
    return;
  }
  if (model.input_dim < 1 || model.output_dim < 1) {
    throw ConfigError("model input/output dimensions must be >= 1");
  }
  for (Index h : model.hidden) {
    if (h < 1) throw ConfigError("hidden layer widths must be >= 1");
  }
  if (model.loss == LossKind::kCrossEntropy && model.output_dim < 2) {
    throw ConfigError("cross-entropy needs at least two outputs");
  }
}

namespace {

struct BuiltGraph {
  std::shared_ptr<const Graph> graph;
  NodeRef prediction;
};

BuiltGraph data_graph(const Model& model) {
  validate(model);
  GraphBuilder b(model.dim());
  const NodeRef x = b.input(model.input_dim);
  const NodeRef y = b.input(model.output_dim);
  NodeRef h = x;
  if (model.kind == ModelKind::kLinear) {
    const NodeRef w = b.param_block(0, model.output_dim, model.input_dim);
    h = b.matmul(w, x);
  } else {
    Index offset = 0;
    Index prev = model.input_dim;
    std::vector<Index> widths = model.hidden;
    widths.push_back(model.output_dim);
    for (std::size_t l = 0; l < widths.size(); ++l) {
      const Index out = widths[l];
      const NodeRef w = b.param_block(offset, out, prev);
      offset += out * prev;
      const NodeRef bias = b.param_block(offset, out, 1);
      offset += out;
      h = b.add_bias(b.matmul(w, h), bias);
      if (l + 1 < widths.size()) {
        h = model.activation == Activation::kTanh ? b.tanh(h) : b.relu(h);
      }
      prev = out;
    }
  }
  const NodeRef loss = model.loss == LossKind::kSquaredError
                           ? b.squared_error(h, y)
                           : b.softmax_cross_entropy(h, y);
  return {std::make_shared<const Graph>(std::move(b).finish(loss)), h};
}

BoundLoss bind_split(const BuiltGraph& g, const Split& split, const char* name) {
  if (split.size() == 0) {
    throw DimensionError(std::string("task has an empty ") + name + " split");
  }
  Batch batch;
  batch.slots = {split.x, split.y};
  return BoundLoss(g.graph, std::move(batch), g.prediction);
}

}  // namespace

Graph quadratic_graph(const Matrix& a, const Vector& b) {
  if (a.rows() != a.cols() || a.rows() != b.size()) {
    throw DimensionError("quadratic payload has inconsistent shapes");
  }
  GraphBuilder g(b.size());
  const NodeRef p = g.params();
  const NodeRef ap = g.matmul(g.constant(a), p);
  const NodeRef quad = g.scale(g.dot(p, ap), 0.5);
  const NodeRef lin = g.dot(g.constant(b), p);
  const NodeRef out = g.add(quad, lin);
  return std::move(g).finish(out);
}

BoundLoss::BoundLoss(std::shared_ptr<const Graph> graph, Batch batch,
                     NodeRef prediction)
    : graph_(std::move(graph)), batch_(std::move(batch)), prediction_(prediction) {}

double BoundLoss::value(const Vector& params, MemoryMeter* meter) const {
  return evaluate(*graph_, params, batch_, meter);
}

Vector BoundLoss::gradient(const Vector& params, MemoryMeter* meter) const {
  return imaml::gradient(*graph_, params, batch_, meter);
}

Vector BoundLoss::hvp(const Vector& params, const Vector& v,
                      MemoryMeter* meter) const {
  return hessian_vector_product(*graph_, params, batch_, v, meter);
}

Tape BoundLoss::record(const Vector& params, MemoryMeter* meter) const {
  return Tape(*graph_, params, batch_, meter);
}

TaskLosses bind_task(const Model& model, const Task& task) {
  TaskLosses out;
  if (model.kind == ModelKind::kQuadratic) {
    if (!task.quadratic) {
      throw DimensionError("quadratic model needs a task with a quadratic payload");
    }
    const QuadraticPayload& q = *task.quadratic;
    if (q.b.size() != model.dim()) {
      throw DimensionError("quadratic payload dimension " +
                           std::to_string(q.b.size()) + " != model dimension " +
                           std::to_string(model.dim()));
    }
    out.train = BoundLoss(std::make_shared<const Graph>(quadratic_graph(q.a, q.b)),
                          Batch{}, NodeRef{});
    out.test = BoundLoss(
        std::make_shared<const Graph>(quadratic_graph(q.test_a, q.test_b)),
        Batch{}, NodeRef{});
    return out;
  }
  const BuiltGraph g = data_graph(model);
  out.train = bind_split(g, task.train, "train");
  out.test = bind_split(g, task.test, "test");
  return out;
}

double train_loss(const Model& model, const Vector& params, const Task& task) {
  return bind_task(model, task).train.value(params);
}

double test_loss(const Model& model, const Vector& params, const Task& task) {
  return bind_task(model, task).test.value(params);
}

double accuracy(const Model& model, const Vector& params, const Split& split) {
  if (model.kind == ModelKind::kQuadratic) {
    throw ConfigError("accuracy is undefined for quadratic models");
  }
  const BuiltGraph g = data_graph(model);
  const BoundLoss loss = bind_split(g, split, "scored");
  const Tape tape = loss.record(params);
  const Matrix& logits = tape.node_value(g.prediction);
  Index correct = 0;
  for (Index j = 0; j < logits.cols(); ++j) {
    Index pred = 0;
    Index truth = 0;
    logits.col(j).maxCoeff(&pred);
    split.y.col(j).maxCoeff(&truth);
    if (pred == truth) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(logits.cols());
}

Vector initial_params(const Model& model, std::uint64_t seed) {
  validate(model);
  Vector p = Vector::Zero(model.dim());
  if (model.kind != ModelKind::kMlp) return p;
  Rng rng(seed);
  Index offset = 0;
  Index prev = model.input_dim;
  std::vector<Index> widths = model.hidden;
  widths.push_back(model.output_dim);
  for (Index out : widths) {
    const double s = 1.0 / std::sqrt(static_cast<double>(prev));
    for (Index k = 0; k < out * prev; ++k) p(offset + k) = s * rng.normal();
    offset += out * prev + out;
    prev = out;
  }
  return p;
}

// ---------------------------------------------------------------------------

InnerObjective::InnerObjective(const BoundLoss& train, Vector theta,
                               double lambda)
    : train_(&train), theta_(std::move(theta)), lambda_(lambda) {
  if (!(lambda_ > 0.0)) {
    throw ConfigError("regularization strength lambda must be positive (got " +
                      std::to_string(lambda_) + ")");
  }
  if (theta_.size() != train.dim()) {
    throw DimensionError("theta has " + std::to_string(theta_.size()) +
                         " entries, model expects " + std::to_string(train.dim()));
  }
}

void InnerObjective::check(const Vector& params) const {
  if (params.size() != theta_.size()) {
    throw DimensionError("parameter vector has " + std::to_string(params.size()) +
                         " entries, expected " + std::to_string(theta_.size()));
  }
}

double InnerObjective::value(const Vector& params, MemoryMeter* meter) const {
  check(params);
  return train_->value(params, meter) +
         0.5 * lambda_ * (params - theta_).squaredNorm();
}

Vector InnerObjective::gradient(const Vector& params, MemoryMeter* meter) const {
  check(params);
  return train_->gradient(params, meter) + lambda_ * (params - theta_);
}

Vector InnerObjective::hvp(const Vector& params, const Vector& v,
                           MemoryMeter* meter) const {
  check(params);
  return train_->hvp(params, v, meter) + lambda_ * v;
}

}  // namespace imaml
