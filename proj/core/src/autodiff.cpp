#include "imaml/autodiff.hpp"

#include <cmath>
#include <sstream>
#include <string>
#include <utility>

#include "imaml/errors.hpp"

namespace imaml {

namespace {

const char* op_name(Op op) {
  switch (op) {
    case Op::kParams: return "params";
    case Op::kParamBlock: return "param_block";
    case Op::kInput: return "input";
    case Op::kConstant: return "constant";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kScale: return "scale";
    case Op::kMatMul: return "matmul";
    case Op::kAddBias: return "add_bias";
    case Op::kTanh: return "tanh";
    case Op::kRelu: return "relu";
    case Op::kSum: return "sum";
    case Op::kMean: return "mean";
    case Op::kDot: return "dot";
    case Op::kSquaredError: return "squared_error";
    case Op::kSoftmaxCrossEntropy: return "softmax_cross_entropy";
  }
  return "?";
}

[[noreturn]] void shape_error(std::size_t i, Op op, const Matrix& a,
                              const Matrix& b) {
  std::ostringstream os;
  os << "node " << i << " (" << op_name(op) << "): incompatible shapes "
     << a.rows() << "x" << a.cols() << " and " << b.rows() << "x" << b.cols();
  throw DimensionError(os.str());
}

void require_same_shape(std::size_t i, Op op, const Matrix& a,
                        const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error(i, op, a, b);
}

Matrix scalar(double x) { return Matrix::Constant(1, 1, x); }

// Column-wise softmax with the usual max shift.
Matrix softmax_columns(const Matrix& logits) {
  Matrix s = logits;
  for (Index j = 0; j < s.cols(); ++j) {
    const double m = s.col(j).maxCoeff();
    s.col(j) = (s.col(j).array() - m).exp();
    s.col(j) /= s.col(j).sum();
  }
  return s;
}

void accumulate(Matrix& into, const Matrix& term) {
  if (into.size() == 0) {
    into = term;
  } else {
    into += term;
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// GraphBuilder

GraphBuilder::GraphBuilder(Index param_dim) {
  if (param_dim < 0) throw DimensionError("negative parameter dimension");
  graph_.param_dim_ = param_dim;
}

void GraphBuilder::check(NodeRef r) const {
  if (r.id < 0 || static_cast<std::size_t>(r.id) >= graph_.nodes_.size()) {
    throw DimensionError("node reference " + std::to_string(r.id) +
                         " does not precede the node being added");
  }
}

NodeRef GraphBuilder::push(Node n) {
  if (n.a >= 0) check(NodeRef{n.a});
  if (n.b >= 0) check(NodeRef{n.b});
  graph_.nodes_.push_back(n);
  return NodeRef{static_cast<int>(graph_.nodes_.size() - 1)};
}

NodeRef GraphBuilder::params() {
  Node n;
  n.op = Op::kParams;
  n.rows = graph_.param_dim_;
  n.cols = 1;
  return push(n);
}

NodeRef GraphBuilder::param_block(Index offset, Index rows, Index cols) {
  if (offset < 0 || rows < 1 || cols < 1 ||
      offset + rows * cols > graph_.param_dim_) {
    throw DimensionError("parameter block [" + std::to_string(offset) + ", " +
                         std::to_string(offset + rows * cols) +
                         ") outside parameter vector of size " +
                         std::to_string(graph_.param_dim_));
  }
  Node n;
  n.op = Op::kParamBlock;
  n.offset = offset;
  n.rows = rows;
  n.cols = cols;
  return push(n);
}

NodeRef GraphBuilder::input(Index rows) {
  Node n;
  n.op = Op::kInput;
  n.rows = rows;
  n.slot = static_cast<int>(graph_.input_rows_.size());
  graph_.input_rows_.push_back(rows);
  return push(n);
}

NodeRef GraphBuilder::constant(Matrix value) {
  Node n;
  n.op = Op::kConstant;
  n.rows = value.rows();
  n.cols = value.cols();
  n.slot = static_cast<int>(graph_.constants_.size());
  graph_.constants_.push_back(std::move(value));
  return push(n);
}

#define IMAML_BINARY(fn, opcode)                 \
  NodeRef GraphBuilder::fn(NodeRef a, NodeRef b) { \
    Node n;                                      \
    n.op = opcode;                               \
    n.a = a.id;                                  \
    n.b = b.id;                                  \
    check(a);                                    \
    check(b);                                    \
    return push(n);                              \
  }

#define IMAML_UNARY(fn, opcode)        \
  NodeRef GraphBuilder::fn(NodeRef a) { \
    Node n;                            \
    n.op = opcode;                     \
    n.a = a.id;                        \
    check(a);                          \
    return push(n);                    \
  }

IMAML_BINARY(add, Op::kAdd)
IMAML_BINARY(sub, Op::kSub)
IMAML_BINARY(mul, Op::kMul)
IMAML_BINARY(matmul, Op::kMatMul)
IMAML_BINARY(add_bias, Op::kAddBias)
IMAML_BINARY(dot, Op::kDot)
IMAML_BINARY(squared_error, Op::kSquaredError)
IMAML_BINARY(softmax_cross_entropy, Op::kSoftmaxCrossEntropy)
IMAML_UNARY(tanh, Op::kTanh)
IMAML_UNARY(relu, Op::kRelu)
IMAML_UNARY(sum, Op::kSum)
IMAML_UNARY(mean, Op::kMean)

#undef IMAML_BINARY
#undef IMAML_UNARY

NodeRef GraphBuilder::scale(NodeRef a, double s) {
  check(a);
  Node n;
  n.op = Op::kScale;
  n.a = a.id;
  n.scalar = s;
  return push(n);
}

Graph GraphBuilder::finish(NodeRef output) && {
  check(output);
  graph_.output_ = output;
  return std::move(graph_);
}

// ---------------------------------------------------------------------------
// Tape

Tape::Tape(const Graph& graph, const Vector& params, const Batch& batch,
           MemoryMeter* meter)
    : graph_(&graph), batch_(&batch), meter_(meter) {
  if (params.size() != graph.param_dim()) {
    throw DimensionError("parameter vector has " +
                         std::to_string(params.size()) +
                         " entries, graph expects " +
                         std::to_string(graph.param_dim()));
  }
  if (static_cast<int>(batch.slots.size()) != graph.input_count()) {
    throw DimensionError("batch has " + std::to_string(batch.slots.size()) +
                         " slots, graph expects " +
                         std::to_string(graph.input_count()));
  }
  for (int s = 0; s < graph.input_count(); ++s) {
    const Matrix& m = batch.slots[static_cast<std::size_t>(s)];
    if (m.rows() != graph.input_rows(s) || m.cols() < 1) {
      throw DimensionError("input slot " + std::to_string(s) + " is " +
                           std::to_string(m.rows()) + "x" +
                           std::to_string(m.cols()) + ", expected " +
                           std::to_string(graph.input_rows(s)) +
                           " rows and at least one column");
    }
  }

  try {
    record(params);
  } catch (...) {
    if (meter_ != nullptr) meter_->release(held_);
    held_ = 0;
    throw;
  }
}

void Tape::record(const Vector& params) {
  const Graph& graph = *graph_;
  const std::size_t n = graph.size();
  values_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Node& nd = graph.node(i);
    const auto ia = static_cast<std::size_t>(nd.a);
    const auto ib = static_cast<std::size_t>(nd.b);
    Matrix& z = values_[i];
    switch (nd.op) {
      case Op::kParams:
        z = params;
        break;
      case Op::kParamBlock:
        z = Eigen::Map<const Matrix>(params.data() + nd.offset, nd.rows,
                                     nd.cols);
        break;
      case Op::kInput:
      case Op::kConstant:
        break;  // read through val()
      case Op::kAdd:
        require_same_shape(i, nd.op, val(ia), val(ib));
        z = val(ia) + val(ib);
        break;
      case Op::kSub:
        require_same_shape(i, nd.op, val(ia), val(ib));
        z = val(ia) - val(ib);
        break;
      case Op::kMul:
        require_same_shape(i, nd.op, val(ia), val(ib));
        z = val(ia).cwiseProduct(val(ib));
        break;
      case Op::kScale:
        z = nd.scalar * val(ia);
        break;
      case Op::kMatMul:
        if (val(ia).cols() != val(ib).rows()) {
          shape_error(i, nd.op, val(ia), val(ib));
        }
        z.noalias() = val(ia) * val(ib);
        break;
      case Op::kAddBias:
        if (val(ib).rows() != val(ia).rows() || val(ib).cols() != 1) {
          shape_error(i, nd.op, val(ia), val(ib));
        }
        z = val(ia).colwise() + val(ib).col(0);
        break;
      case Op::kTanh:
        z = val(ia).array().tanh().matrix();
        break;
      case Op::kRelu:
        z = val(ia).cwiseMax(0.0);
        break;
      case Op::kSum:
        z = scalar(val(ia).sum());
        break;
      case Op::kMean:
        z = scalar(val(ia).mean());
        break;
      case Op::kDot:
        require_same_shape(i, nd.op, val(ia), val(ib));
        z = scalar(val(ia).cwiseProduct(val(ib)).sum());
        break;
      case Op::kSquaredError: {
        require_same_shape(i, nd.op, val(ia), val(ib));
        const double cols = static_cast<double>(val(ia).cols());
        z = scalar(0.5 * (val(ia) - val(ib)).squaredNorm() / cols);
        break;
      }
      case Op::kSoftmaxCrossEntropy: {
        require_same_shape(i, nd.op, val(ia), val(ib));
        const Matrix& l = val(ia);
        const Matrix& y = val(ib);
        double total = 0.0;
        for (Index j = 0; j < l.cols(); ++j) {
          const double m = l.col(j).maxCoeff();
          const double lse =
              m + std::log((l.col(j).array() - m).exp().sum());
          total += lse * y.col(j).sum() - y.col(j).dot(l.col(j));
        }
        z = scalar(total / static_cast<double>(l.cols()));
        break;
      }
    }
    if (meter_ != nullptr) meter_->acquire(1);
    ++held_;
    if (!val(i).allFinite()) {
      throw NonFiniteError("non-finite value at node " + std::to_string(i) +
                               " (" + op_name(nd.op) + ")",
                           static_cast<int>(i));
    }
  }
  const Matrix& out = val(static_cast<std::size_t>(graph.output().id));
  if (out.rows() != 1 || out.cols() != 1) {
    throw DimensionError("graph output is " + std::to_string(out.rows()) +
                         "x" + std::to_string(out.cols()) +
                         ", expected a scalar");
  }
}

Tape::~Tape() {
  if (meter_ != nullptr) meter_->release(held_);
}

Tape::Tape(Tape&& other) noexcept
    : graph_(other.graph_),
      batch_(other.batch_),
      meter_(other.meter_),
      values_(std::move(other.values_)),
      adjoints_(std::move(other.adjoints_)),
      has_adjoints_(other.has_adjoints_),
      held_(other.held_) {
  other.held_ = 0;
  other.meter_ = nullptr;
}

const Matrix& Tape::val(std::size_t i) const {
  const Node& nd = graph_->node(i);
  if (nd.op == Op::kInput) return batch_->slots[static_cast<std::size_t>(nd.slot)];
  if (nd.op == Op::kConstant) return graph_->constant(nd.slot);
  return values_[i];
}

double Tape::value() const {
  return val(static_cast<std::size_t>(graph_->output().id))(0, 0);
}

const Matrix& Tape::node_value(NodeRef r) const {
  if (r.id < 0 || static_cast<std::size_t>(r.id) >= values_.size()) {
    throw DimensionError("node reference out of range");
  }
  return val(static_cast<std::size_t>(r.id));
}

void Tape::ensure_adjoints() {
  if (has_adjoints_) return;
  const std::size_t n = graph_->size();
  adjoints_.assign(n, Matrix());
  if (meter_ != nullptr) meter_->acquire(n);
  held_ += n;
  adjoints_[static_cast<std::size_t>(graph_->output().id)] = scalar(1.0);

  for (std::size_t k = n; k-- > 0;) {
    const Matrix& g = adjoints_[k];
    if (g.size() == 0) continue;
    const Node& nd = graph_->node(k);
    const auto ia = static_cast<std::size_t>(nd.a);
    const auto ib = static_cast<std::size_t>(nd.b);
    switch (nd.op) {
      case Op::kParams:
      case Op::kParamBlock:
      case Op::kInput:
      case Op::kConstant:
        break;
      case Op::kAdd:
        accumulate(adjoints_[ia], g);
        accumulate(adjoints_[ib], g);
        break;
      case Op::kSub:
        accumulate(adjoints_[ia], g);
        accumulate(adjoints_[ib], -g);
        break;
      case Op::kMul:
        accumulate(adjoints_[ia], g.cwiseProduct(val(ib)));
        accumulate(adjoints_[ib], g.cwiseProduct(val(ia)));
        break;
      case Op::kScale:
        accumulate(adjoints_[ia], nd.scalar * g);
        break;
      case Op::kMatMul:
        accumulate(adjoints_[ia], g * val(ib).transpose());
        accumulate(adjoints_[ib], val(ia).transpose() * g);
        break;
      case Op::kAddBias:
        accumulate(adjoints_[ia], g);
        accumulate(adjoints_[ib], g.rowwise().sum());
        break;
      case Op::kTanh: {
        const Matrix& z = val(k);
        accumulate(adjoints_[ia],
                   g.cwiseProduct((1.0 - z.array().square()).matrix()));
        break;
      }
      case Op::kRelu:
        accumulate(adjoints_[ia],
                   (val(ia).array() > 0.0).cast<double>().matrix().cwiseProduct(g));
        break;
      case Op::kSum:
        accumulate(adjoints_[ia],
                   Matrix::Constant(val(ia).rows(), val(ia).cols(), g(0, 0)));
        break;
      case Op::kMean: {
        const double s = g(0, 0) / static_cast<double>(val(ia).size());
        accumulate(adjoints_[ia],
                   Matrix::Constant(val(ia).rows(), val(ia).cols(), s));
        break;
      }
      case Op::kDot:
        accumulate(adjoints_[ia], g(0, 0) * val(ib));
        accumulate(adjoints_[ib], g(0, 0) * val(ia));
        break;
      case Op::kSquaredError: {
        const double s = g(0, 0) / static_cast<double>(val(ia).cols());
        const Matrix r = val(ia) - val(ib);
        accumulate(adjoints_[ia], s * r);
        accumulate(adjoints_[ib], -s * r);
        break;
      }
      case Op::kSoftmaxCrossEntropy: {
        const double s = g(0, 0) / static_cast<double>(val(ia).cols());
        const Matrix& y = val(ib);
        Matrix p = softmax_columns(val(ia));
        for (Index j = 0; j < p.cols(); ++j) p.col(j) *= y.col(j).sum();
        accumulate(adjoints_[ia], s * (p - y));
        break;
      }
    }
  }
  has_adjoints_ = true;
}

Vector Tape::gradient() {
  ensure_adjoints();
  Vector grad = Vector::Zero(graph_->param_dim());
  for (std::size_t k = 0; k < graph_->size(); ++k) {
    const Matrix& g = adjoints_[k];
    if (g.size() == 0) continue;
    const Node& nd = graph_->node(k);
    if (nd.op == Op::kParams) {
      grad += g.col(0);
    } else if (nd.op == Op::kParamBlock) {
      grad.segment(nd.offset, nd.rows * nd.cols) +=
          Eigen::Map<const Vector>(g.data(), g.size());
    }
  }
  return grad;
}

Vector Tape::hvp(const Vector& v) {
  if (v.size() != graph_->param_dim()) {
    throw DimensionError("HVP direction has " + std::to_string(v.size()) +
                         " entries, graph expects " +
                         std::to_string(graph_->param_dim()));
  }
  ensure_adjoints();
  const std::size_t n = graph_->size();
  // Tangents and adjoint tangents; an empty matrix stands for zero.
  std::vector<Matrix> tan(n);
  std::vector<Matrix> adt(n);
  if (meter_ != nullptr) meter_->acquire(2 * n);

  auto has = [](const std::vector<Matrix>& m, std::size_t i) {
    return m[i].size() != 0;
  };

  // Tangent sweep: directional derivative of every node value along v.
  for (std::size_t i = 0; i < n; ++i) {
    const Node& nd = graph_->node(i);
    const auto ia = static_cast<std::size_t>(nd.a);
    const auto ib = static_cast<std::size_t>(nd.b);
    Matrix& t = tan[i];
    switch (nd.op) {
      case Op::kParams:
        t = v;
        break;
      case Op::kParamBlock:
        t = Eigen::Map<const Matrix>(v.data() + nd.offset, nd.rows, nd.cols);
        break;
      case Op::kInput:
      case Op::kConstant:
        break;
      case Op::kAdd:
        if (has(tan, ia)) accumulate(t, tan[ia]);
        if (has(tan, ib)) accumulate(t, tan[ib]);
        break;
      case Op::kSub:
        if (has(tan, ia)) accumulate(t, tan[ia]);
        if (has(tan, ib)) accumulate(t, -tan[ib]);
        break;
      case Op::kMul:
        if (has(tan, ia)) accumulate(t, tan[ia].cwiseProduct(val(ib)));
        if (has(tan, ib)) accumulate(t, val(ia).cwiseProduct(tan[ib]));
        break;
      case Op::kScale:
        if (has(tan, ia)) t = nd.scalar * tan[ia];
        break;
      case Op::kMatMul:
        if (has(tan, ia)) accumulate(t, tan[ia] * val(ib));
        if (has(tan, ib)) accumulate(t, val(ia) * tan[ib]);
        break;
      case Op::kAddBias:
        if (has(tan, ia)) accumulate(t, tan[ia]);
        if (has(tan, ib)) {
          accumulate(t, tan[ib].col(0).replicate(1, val(ia).cols()));
        }
        break;
      case Op::kTanh:
        if (has(tan, ia)) {
          t = (1.0 - val(i).array().square()).matrix().cwiseProduct(tan[ia]);
        }
        break;
      case Op::kRelu:
        if (has(tan, ia)) {
          t = (val(ia).array() > 0.0).cast<double>().matrix().cwiseProduct(
              tan[ia]);
        }
        break;
      case Op::kSum:
        if (has(tan, ia)) t = scalar(tan[ia].sum());
        break;
      case Op::kMean:
        if (has(tan, ia)) t = scalar(tan[ia].mean());
        break;
      case Op::kDot: {
        double s = 0.0;
        bool any = false;
        if (has(tan, ia)) {
          s += tan[ia].cwiseProduct(val(ib)).sum();
          any = true;
        }
        if (has(tan, ib)) {
          s += val(ia).cwiseProduct(tan[ib]).sum();
          any = true;
        }
        if (any) t = scalar(s);
        break;
      }
      case Op::kSquaredError: {
        if (!has(tan, ia) && !has(tan, ib)) break;
        Matrix dr = has(tan, ia) ? tan[ia] : Matrix::Zero(val(ia).rows(), val(ia).cols());
        if (has(tan, ib)) dr -= tan[ib];
        t = scalar((val(ia) - val(ib)).cwiseProduct(dr).sum() /
                   static_cast<double>(val(ia).cols()));
        break;
      }
      case Op::kSoftmaxCrossEntropy: {
        if (!has(tan, ia)) break;
        const Matrix& y = val(ib);
        Matrix p = softmax_columns(val(ia));
        for (Index j = 0; j < p.cols(); ++j) p.col(j) *= y.col(j).sum();
        t = scalar((p - y).cwiseProduct(tan[ia]).sum() /
                   static_cast<double>(val(ia).cols()));
        break;
      }
    }
  }

  // Reverse sweep for d(adjoint)/dv.
  for (std::size_t k = n; k-- > 0;) {
    const Matrix& g = adjoints_[k];
    if (g.size() == 0) continue;
    const bool gt_live = has(adt, k);
    const Matrix& gt = adt[k];
    const Node& nd = graph_->node(k);
    const auto ia = static_cast<std::size_t>(nd.a);
    const auto ib = static_cast<std::size_t>(nd.b);
    switch (nd.op) {
      case Op::kParams:
      case Op::kParamBlock:
      case Op::kInput:
      case Op::kConstant:
        break;
      case Op::kAdd:
        if (gt_live) {
          accumulate(adt[ia], gt);
          accumulate(adt[ib], gt);
        }
        break;
      case Op::kSub:
        if (gt_live) {
          accumulate(adt[ia], gt);
          accumulate(adt[ib], -gt);
        }
        break;
      case Op::kMul:
        if (gt_live) {
          accumulate(adt[ia], gt.cwiseProduct(val(ib)));
          accumulate(adt[ib], gt.cwiseProduct(val(ia)));
        }
        if (has(tan, ib)) accumulate(adt[ia], g.cwiseProduct(tan[ib]));
        if (has(tan, ia)) accumulate(adt[ib], g.cwiseProduct(tan[ia]));
        break;
      case Op::kScale:
        if (gt_live) accumulate(adt[ia], nd.scalar * gt);
        break;
      case Op::kMatMul:
        if (gt_live) {
          accumulate(adt[ia], gt * val(ib).transpose());
          accumulate(adt[ib], val(ia).transpose() * gt);
        }
        if (has(tan, ib)) accumulate(adt[ia], g * tan[ib].transpose());
        if (has(tan, ia)) accumulate(adt[ib], tan[ia].transpose() * g);
        break;
      case Op::kAddBias:
        if (gt_live) {
          accumulate(adt[ia], gt);
          accumulate(adt[ib], gt.rowwise().sum());
        }
        break;
      case Op::kTanh: {
        const Matrix& z = val(k);
        if (gt_live) {
          accumulate(adt[ia],
                     gt.cwiseProduct((1.0 - z.array().square()).matrix()));
        }
        if (has(tan, k)) {
          accumulate(adt[ia], (-2.0 * g.array() * z.array() * tan[k].array())
                                  .matrix());
        }
        break;
      }
      case Op::kRelu:
        if (gt_live) {
          accumulate(adt[ia], (val(ia).array() > 0.0)
                                  .cast<double>()
                                  .matrix()
                                  .cwiseProduct(gt));
        }
        break;
      case Op::kSum:
        if (gt_live) {
          accumulate(adt[ia],
                     Matrix::Constant(val(ia).rows(), val(ia).cols(), gt(0, 0)));
        }
        break;
      case Op::kMean:
        if (gt_live) {
          const double s = gt(0, 0) / static_cast<double>(val(ia).size());
          accumulate(adt[ia],
                     Matrix::Constant(val(ia).rows(), val(ia).cols(), s));
        }
        break;
      case Op::kDot:
        if (gt_live) {
          accumulate(adt[ia], gt(0, 0) * val(ib));
          accumulate(adt[ib], gt(0, 0) * val(ia));
        }
        if (has(tan, ib)) accumulate(adt[ia], g(0, 0) * tan[ib]);
        if (has(tan, ia)) accumulate(adt[ib], g(0, 0) * tan[ia]);
        break;
      case Op::kSquaredError: {
        const double inv_n = 1.0 / static_cast<double>(val(ia).cols());
        Matrix term = Matrix::Zero(val(ia).rows(), val(ia).cols());
        bool any = false;
        if (gt_live) {
          term += gt(0, 0) * inv_n * (val(ia) - val(ib));
          any = true;
        }
        if (has(tan, ia)) {
          term += g(0, 0) * inv_n * tan[ia];
          any = true;
        }
        if (has(tan, ib)) {
          term -= g(0, 0) * inv_n * tan[ib];
          any = true;
        }
        if (any) {
          accumulate(adt[ia], term);
          accumulate(adt[ib], -term);
        }
        break;
      }
      case Op::kSoftmaxCrossEntropy: {
        const double inv_n = 1.0 / static_cast<double>(val(ia).cols());
        const Matrix& y = val(ib);
        const Matrix s = softmax_columns(val(ia));
        Matrix term = Matrix::Zero(s.rows(), s.cols());
        bool any = false;
        if (gt_live) {
          Matrix p = s;
          for (Index j = 0; j < p.cols(); ++j) p.col(j) *= y.col(j).sum();
          term += gt(0, 0) * inv_n * (p - y);
          any = true;
        }
        if (has(tan, ia)) {
          // d softmax = s * (dl - s^T dl), scaled by the label mass.
          Matrix ds = s.cwiseProduct(tan[ia]);
          for (Index j = 0; j < ds.cols(); ++j) {
            const double proj = ds.col(j).sum();
            ds.col(j) -= proj * s.col(j);
            ds.col(j) *= y.col(j).sum();
          }
          term += g(0, 0) * inv_n * ds;
          any = true;
        }
        if (any) accumulate(adt[ia], term);
        break;
      }
    }
  }

  Vector out = Vector::Zero(graph_->param_dim());
  for (std::size_t k = 0; k < n; ++k) {
    if (!has(adt, k)) continue;
    const Node& nd = graph_->node(k);
    if (nd.op == Op::kParams) {
      out += adt[k].col(0);
    } else if (nd.op == Op::kParamBlock) {
      out.segment(nd.offset, nd.rows * nd.cols) +=
          Eigen::Map<const Vector>(adt[k].data(), adt[k].size());
    }
  }
  if (meter_ != nullptr) meter_->release(2 * n);
  return out;
}

// ---------------------------------------------------------------------------

double evaluate(const Graph& graph, const Vector& params, const Batch& batch,
                MemoryMeter* meter) {
  return Tape(graph, params, batch, meter).value();
}

Vector gradient(const Graph& graph, const Vector& params, const Batch& batch,
                MemoryMeter* meter) {
  return Tape(graph, params, batch, meter).gradient();
}

Vector hessian_vector_product(const Graph& graph, const Vector& params,
                              const Batch& batch, const Vector& v,
                              MemoryMeter* meter) {
  return Tape(graph, params, batch, meter).hvp(v);
}

}  // namespace imaml
