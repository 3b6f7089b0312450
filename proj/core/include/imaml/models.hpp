#pragma once

// Parametric models h_phi and the three loss surfaces of the bi-level
// problem: train loss, test loss and the proximal inner objective
//   G(phi) = train_loss(phi) + (lambda / 2) * ||phi - theta||^2.

#include <memory>
#include <string>
#include <vector>

#include "imaml/autodiff.hpp"
#include "imaml/tasks.hpp"
#include "imaml/types.hpp"

namespace imaml {

enum class ModelKind { kLinear, kMlp, kQuadratic };
enum class Activation { kTanh, kRelu };
enum class LossKind { kSquaredError, kCrossEntropy };

std::string to_string(ModelKind k);
ModelKind model_kind_from_string(const std::string& s);
std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);
std::string to_string(LossKind k);
LossKind loss_kind_from_string(const std::string& s);

struct Model {
  ModelKind kind = ModelKind::kMlp;
  Index input_dim = 1;
  Index output_dim = 1;
  std::vector<Index> hidden = {40, 40};
  Activation activation = Activation::kTanh;
  LossKind loss = LossKind::kSquaredError;
  Index quadratic_dim = 0;  // kQuadratic only

  // Parameter dimension d. Linear: output x input weights, no bias
  // (h(x) = W x). MLP: per layer a column-major weight block followed by
  // its bias.
  Index dim() const;

  static Model linear(Index input_dim, Index output_dim = 1);
  static Model mlp(Index input_dim, std::vector<Index> hidden, Index output_dim,
                   Activation act = Activation::kTanh,
                   LossKind loss = LossKind::kSquaredError);
  static Model quadratic(Index dim);
};

void validate(const Model& model);

// A loss graph together with the data it is evaluated on.
class BoundLoss {
 public:
  BoundLoss() = default;
  BoundLoss(std::shared_ptr<const Graph> graph, Batch batch, NodeRef prediction);

  Index dim() const { return graph_->param_dim(); }
  const Graph& graph() const { return *graph_; }
  const Batch& batch() const { return batch_; }
  // Model output node (logits / regression output); invalid for quadratics.
  NodeRef prediction() const { return prediction_; }

  double value(const Vector& params, MemoryMeter* meter = nullptr) const;
  Vector gradient(const Vector& params, MemoryMeter* meter = nullptr) const;
  Vector hvp(const Vector& params, const Vector& v,
             MemoryMeter* meter = nullptr) const;
  Tape record(const Vector& params, MemoryMeter* meter = nullptr) const;

 private:
  std::shared_ptr<const Graph> graph_;
  Batch batch_;
  NodeRef prediction_;
};

struct TaskLosses {
  BoundLoss train;
  BoundLoss test;
};

// Builds the train and test losses of one task. Quadratic models need a
// quadratic payload; data models need nonempty splits.
TaskLosses bind_task(const Model& model, const Task& task);

// Loss graph 0.5 phi^T A phi + b^T phi.
Graph quadratic_graph(const Matrix& a, const Vector& b);

double train_loss(const Model& model, const Vector& params, const Task& task);
double test_loss(const Model& model, const Vector& params, const Task& task);

// Classification accuracy of params on a split, by argmax of the logits.
double accuracy(const Model& model, const Vector& params, const Split& split);

// Deterministic initial parameters: small Gaussian weights scaled by
// 1/sqrt(fan_in), zero biases (MLP); zeros otherwise when scale == 0.
Vector initial_params(const Model& model, std::uint64_t seed);

// G(phi, theta) = L_train(phi) + (lambda/2) ||phi - theta||^2.
class InnerObjective {
 public:
  InnerObjective(const BoundLoss& train, Vector theta, double lambda);

  Index dim() const { return theta_.size(); }
  const Vector& theta() const { return theta_; }
  double lambda() const { return lambda_; }
  const BoundLoss& train() const { return *train_; }

  double value(const Vector& params, MemoryMeter* meter = nullptr) const;
  Vector gradient(const Vector& params, MemoryMeter* meter = nullptr) const;
  Vector hvp(const Vector& params, const Vector& v,
             MemoryMeter* meter = nullptr) const;

 private:
  void check(const Vector& params) const;

  const BoundLoss* train_;
  Vector theta_;
  double lambda_;
};

}  // namespace imaml
