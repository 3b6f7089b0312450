#pragma once

// Small reverse-mode autodiff over matrix-valued nodes.
//
// A Graph is an immutable list of nodes in evaluation order with a single
// scalar output. Evaluating it records a Tape. The tape supports the
// gradient (one reverse sweep) and Hessian-vector products computed by
// forward-over-reverse: a tangent sweep seeded with v followed by a reverse
// sweep that carries the derivative of every adjoint along v.
//
// Memory is accounted in tape slots: every node value, tangent, adjoint and
// adjoint-tangent held by a tape is one slot. A gradient therefore peaks at
// 2n slots for an n-node graph and an HVP at 4n.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "imaml/types.hpp"

namespace imaml {

// Live/peak slot counter shared by the tapes of one top-level computation.
// Not thread safe; give each concurrent computation its own meter.
class MemoryMeter {
 public:
  void acquire(std::size_t slots) noexcept {
    live_ += slots;
    if (live_ > peak_) peak_ = live_;
  }
  void release(std::size_t slots) noexcept { live_ -= slots; }
  void reset() noexcept {
    live_ = 0;
    peak_ = 0;
  }
  std::size_t live() const noexcept { return live_; }
  std::size_t peak() const noexcept { return peak_; }

 private:
  std::size_t live_ = 0;
  std::size_t peak_ = 0;
};

struct NodeRef {
  int id = -1;
  friend bool operator==(NodeRef, NodeRef) = default;
};

enum class Op : std::uint8_t {
  kParams,
  kParamBlock,
  kInput,
  kConstant,
  kAdd,
  kSub,
  kMul,
  kScale,
  kMatMul,
  kAddBias,
  kTanh,
  kRelu,
  kSum,
  kMean,
  kDot,
  kSquaredError,
  kSoftmaxCrossEntropy,
};

struct Node {
  Op op = Op::kConstant;
  int a = -1;
  int b = -1;
  double scalar = 0.0;
  Index offset = 0;
  Index rows = 0;
  Index cols = 0;
  int slot = -1;  // input slot or constant index
};

// Data bound to a graph's input slots, one matrix per slot (columns are
// examples).
struct Batch {
  std::vector<Matrix> slots;
};

class Graph {
 public:
  Index param_dim() const noexcept { return param_dim_; }
  std::size_t size() const noexcept { return nodes_.size(); }
  int input_count() const noexcept { return static_cast<int>(input_rows_.size()); }
  Index input_rows(int slot) const { return input_rows_.at(static_cast<std::size_t>(slot)); }
  NodeRef output() const noexcept { return output_; }
  const Node& node(std::size_t i) const { return nodes_[i]; }
  const Matrix& constant(int i) const { return constants_[static_cast<std::size_t>(i)]; }

 private:
  friend class GraphBuilder;
  std::vector<Node> nodes_;
  std::vector<Matrix> constants_;
  std::vector<Index> input_rows_;
  Index param_dim_ = 0;
  NodeRef output_;
};

class GraphBuilder {
 public:
  explicit GraphBuilder(Index param_dim);

  // Whole parameter vector as a (param_dim x 1) node.
  NodeRef params();
  // Column-major reshape of params[offset, offset + rows*cols).
  NodeRef param_block(Index offset, Index rows, Index cols);
  // Data slot with a fixed row count and any number of columns.
  NodeRef input(Index rows);
  NodeRef constant(Matrix value);

  NodeRef add(NodeRef a, NodeRef b);
  NodeRef sub(NodeRef a, NodeRef b);
  NodeRef mul(NodeRef a, NodeRef b);
  NodeRef scale(NodeRef a, double s);
  NodeRef matmul(NodeRef a, NodeRef b);
  // a (r x n) + bias (r x 1) added to every column.
  NodeRef add_bias(NodeRef a, NodeRef bias);
  NodeRef tanh(NodeRef a);
  NodeRef relu(NodeRef a);
  NodeRef sum(NodeRef a);
  NodeRef mean(NodeRef a);
  NodeRef dot(NodeRef a, NodeRef b);
  // (1/n) * sum_j 0.5 * ||pred_j - target_j||^2 over the n columns.
  NodeRef squared_error(NodeRef pred, NodeRef target);
  // Mean over columns of logsumexp(logits_j) - labels_j^T logits_j. Labels are
  // one-hot (or any distribution) columns and are not differentiated.
  NodeRef softmax_cross_entropy(NodeRef logits, NodeRef labels);

  Graph finish(NodeRef output) &&;

 private:
  NodeRef push(Node n);
  void check(NodeRef r) const;

  Graph graph_;
};

// Recorded forward evaluation of one graph at one parameter vector.
//
// The tape references the graph and batch it was recorded from; both must
// outlive it. Slots are reported to the meter (if any) while they are live.
class Tape {
 public:
  Tape(const Graph& graph, const Vector& params, const Batch& batch,
       MemoryMeter* meter = nullptr);
  ~Tape();
  Tape(Tape&& other) noexcept;
  Tape& operator=(Tape&&) = delete;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  double value() const;
  const Matrix& node_value(NodeRef r) const;

  // Runs the reverse sweep once and keeps the adjoints on the tape.
  Vector gradient();
  // Hessian of the output times v at the recorded point. Reuses the stored
  // adjoints (computing them first if needed); tangent storage is transient.
  Vector hvp(const Vector& v);

  std::size_t slots() const noexcept { return held_; }

 private:
  const Matrix& val(std::size_t i) const;
  void record(const Vector& params);
  void ensure_adjoints();

  const Graph* graph_;
  const Batch* batch_;
  MemoryMeter* meter_;
  std::vector<Matrix> values_;
  std::vector<Matrix> adjoints_;
  bool has_adjoints_ = false;
  std::size_t held_ = 0;
};

double evaluate(const Graph& graph, const Vector& params, const Batch& batch,
                MemoryMeter* meter = nullptr);
Vector gradient(const Graph& graph, const Vector& params, const Batch& batch,
                MemoryMeter* meter = nullptr);
Vector hessian_vector_product(const Graph& graph, const Vector& params,
                              const Batch& batch, const Vector& v,
                              MemoryMeter* meter = nullptr);

}  // namespace imaml
