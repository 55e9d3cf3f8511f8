#include "uda/graph.hpp"

#include <cmath>

namespace uda {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw GraphError(msg);
}

double stable_softplus(double x) {
  // log(1 + e^x) without overflow for large |x|.
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

}  // namespace

const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::kInput: return "input";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kAddRowvec: return "add_rowvec";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kRelu: return "relu";
    case OpKind::kTanh: return "tanh";
    case OpKind::kExp: return "exp";
    case OpKind::kLog: return "log";
    case OpKind::kSquare: return "square";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kSoftplus: return "softplus";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kLogSoftmax: return "log_softmax";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kConcatRows: return "concat_rows";
    case OpKind::kConcatCols: return "concat_cols";
    case OpKind::kSliceRows: return "slice_rows";
    case OpKind::kSliceCols: return "slice_cols";
    case OpKind::kStopGradient: return "stop_gradient";
    case OpKind::kGradReversal: return "grad_reversal";
    case OpKind::kOuterFlatten: return "outer_flatten";
  }
  return "?";
}

const Tensor& Value::tensor() const { return graph->value(id); }

double Value::scalar() const {
  const Tensor& t = graph->value(id);
  require(t.is_scalar(), "Value::scalar: node is not scalar-shaped");
  return t[0];
}

Value Graph::input(Tensor t) {
  require(t.all_finite(), "input: nonfinite values");
  Node n;
  n.op = OpKind::kInput;
  n.out = std::move(t);
  return Value{this, emit(std::move(n))};
}

NodeId Graph::emit(Node n) {
  require(n.out.all_finite(), std::string(op_name(n.op)) + ": nonfinite result");
  nodes_.push_back(std::move(n));
  grads_valid_ = false;
  return nodes_.size() - 1;
}

const Tensor& Graph::grad(NodeId id) const {
  require(grads_valid_, "grad: backward has not been run");
  return grads_[id];
}

void Graph::backward(NodeId root) {
  require(root < nodes_.size(), "backward: bad root id");
  require(nodes_[root].out.is_scalar(), "backward: root must be scalar-shaped");
  grads_.clear();
  grads_.reserve(nodes_.size());
  for (const Node& n : nodes_) grads_.emplace_back(n.out.shape());
  grads_[root][0] = 1.0;
  grads_valid_ = true;
  // Nodes only reference earlier nodes, so one reverse sweep suffices.
  for (NodeId id = root + 1; id-- > 0;) {
    if ((grads_[id].array() == 0.0).all()) continue;
    propagate(id);
  }
}

namespace {

// Helpers shared by forward construction. All binary ops go through the
// owning graph of the first operand; mixing graphs is a caller bug.
Graph* same_graph(Value a, Value b) {
  require(a.graph == b.graph, "op: operands belong to different graphs");
  return a.graph;
}

}  // namespace

Value matmul(Value a, Value b) {
  Graph* g = same_graph(a, b);
  const Tensor& ta = g->value(a.id);
  const Tensor& tb = g->value(b.id);
  require(ta.rank() == 2 && tb.rank() == 2, "matmul: operands must be rank 2");
  require(ta.cols() == tb.rows(), "matmul: inner dimensions mismatch");
  Graph::Node n;
  n.op = OpKind::kMatmul;
  n.in = {a.id, b.id};
  n.arity = 2;
  Matrix out = ta.as_matrix() * tb.as_matrix();
  n.out = Tensor::from_matrix(out);
  return Value{g, g->emit(std::move(n))};
}

namespace {

Value elementwise_binary(Value a, Value b, OpKind kind) {
  Graph* g = same_graph(a, b);
  const Tensor& ta = g->value(a.id);
  const Tensor& tb = g->value(b.id);
  require(ta.same_shape(tb), std::string(op_name(kind)) + ": shape mismatch");
  Graph::Node n;
  n.op = kind;
  n.in = {a.id, b.id};
  n.arity = 2;
  switch (kind) {
    case OpKind::kAdd: n.out = Tensor(ta.shape(), ta.array() + tb.array()); break;
    case OpKind::kSub: n.out = Tensor(ta.shape(), ta.array() - tb.array()); break;
    case OpKind::kMul: n.out = Tensor(ta.shape(), ta.array() * tb.array()); break;
    default: throw GraphError("elementwise_binary: bad kind");
  }
  return Value{g, g->emit(std::move(n))};
}

Value elementwise_unary(Value a, OpKind kind, double attr = 0.0) {
  Graph* g = a.graph;
  const Tensor& ta = g->value(a.id);
  Graph::Node n;
  n.op = kind;
  n.in = {a.id, 0};
  n.arity = 1;
  n.attr = attr;
  switch (kind) {
    case OpKind::kScale: n.out = Tensor(ta.shape(), ta.array() * attr); break;
    case OpKind::kRelu: n.out = Tensor(ta.shape(), ta.array().max(0.0)); break;
    case OpKind::kTanh: n.out = Tensor(ta.shape(), ta.array().tanh()); break;
    case OpKind::kExp: n.out = Tensor(ta.shape(), ta.array().exp()); break;
    case OpKind::kLog:
      require((ta.array() > 0.0).all(), "log: nonpositive input");
      n.out = Tensor(ta.shape(), ta.array().log());
      break;
    case OpKind::kSquare: n.out = Tensor(ta.shape(), ta.array().square()); break;
    case OpKind::kSigmoid: n.out = Tensor(ta.shape(), 1.0 / (1.0 + (-ta.array()).exp())); break;
    case OpKind::kSoftplus: {
      ArrayX out(ta.numel());
      for (Index i = 0; i < ta.numel(); ++i) out[i] = stable_softplus(ta[i]);
      n.out = Tensor(ta.shape(), std::move(out));
      break;
    }
    case OpKind::kStopGradient:
    case OpKind::kGradReversal:
      n.out = ta;  // identity forward
      break;
    default: throw GraphError("elementwise_unary: bad kind");
  }
  return Value{g, g->emit(std::move(n))};
}

}  // namespace

Value add(Value a, Value b) { return elementwise_binary(a, b, OpKind::kAdd); }
Value sub(Value a, Value b) { return elementwise_binary(a, b, OpKind::kSub); }
Value mul(Value a, Value b) { return elementwise_binary(a, b, OpKind::kMul); }
Value scale(Value a, double c) { return elementwise_unary(a, OpKind::kScale, c); }
Value relu(Value a) { return elementwise_unary(a, OpKind::kRelu); }
Value tanh(Value a) { return elementwise_unary(a, OpKind::kTanh); }
Value exp(Value a) { return elementwise_unary(a, OpKind::kExp); }
Value log(Value a) { return elementwise_unary(a, OpKind::kLog); }
Value square(Value a) { return elementwise_unary(a, OpKind::kSquare); }
Value sigmoid(Value a) { return elementwise_unary(a, OpKind::kSigmoid); }
Value softplus(Value a) { return elementwise_unary(a, OpKind::kSoftplus); }
Value stop_gradient(Value a) { return elementwise_unary(a, OpKind::kStopGradient); }
Value grad_reversal(Value a, double lambda) { return elementwise_unary(a, OpKind::kGradReversal, lambda); }

Value add_rowvec(Value m, Value v) {
  Graph* g = same_graph(m, v);
  const Tensor& tm = g->value(m.id);
  const Tensor& tv = g->value(v.id);
  require(tm.rank() == 2 && tv.rank() == 1, "add_rowvec: want rank-2 matrix and rank-1 vector");
  require(tm.cols() == tv.cols(), "add_rowvec: width mismatch");
  Graph::Node n;
  n.op = OpKind::kAddRowvec;
  n.in = {m.id, v.id};
  n.arity = 2;
  Matrix out = tm.as_matrix();
  out.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(tv.array().data(), tv.numel());
  n.out = Tensor::from_matrix(out);
  return Value{g, g->emit(std::move(n))};
}

Value softmax(Value a) {
  Graph* g = a.graph;
  const Tensor& ta = g->value(a.id);
  require(ta.rank() == 1 || ta.rank() == 2, "softmax: want rank 1 or 2");
  Graph::Node n;
  n.op = OpKind::kSoftmax;
  n.in = {a.id, 0};
  n.arity = 1;
  n.out = Tensor(ta.shape());
  softmax_rows(ta, n.out, false);
  return Value{g, g->emit(std::move(n))};
}

Value log_softmax(Value a) {
  Graph* g = a.graph;
  const Tensor& ta = g->value(a.id);
  require(ta.rank() == 1 || ta.rank() == 2, "log_softmax: want rank 1 or 2");
  Graph::Node n;
  n.op = OpKind::kLogSoftmax;
  n.in = {a.id, 0};
  n.arity = 1;
  n.out = Tensor(ta.shape());
  softmax_rows(ta, n.out, true);
  return Value{g, g->emit(std::move(n))};
}

Value sum(Value a) {
  Graph* g = a.graph;
  Graph::Node n;
  n.op = OpKind::kSum;
  n.in = {a.id, 0};
  n.arity = 1;
  n.out = Tensor::scalar(g->value(a.id).array().sum());
  return Value{g, g->emit(std::move(n))};
}

Value mean(Value a) {
  Graph* g = a.graph;
  Graph::Node n;
  n.op = OpKind::kMean;
  n.in = {a.id, 0};
  n.arity = 1;
  n.out = Tensor::scalar(g->value(a.id).array().mean());
  return Value{g, g->emit(std::move(n))};
}

Value concat_rows(Value a, Value b) {
  Graph* g = same_graph(a, b);
  const Tensor& ta = g->value(a.id);
  const Tensor& tb = g->value(b.id);
  require(ta.rank() == 2 && tb.rank() == 2 && ta.cols() == tb.cols(), "concat_rows: width mismatch");
  Graph::Node n;
  n.op = OpKind::kConcatRows;
  n.in = {a.id, b.id};
  n.arity = 2;
  Tensor out({ta.rows() + tb.rows(), ta.cols()});
  out.array().head(ta.numel()) = ta.array();
  out.array().tail(tb.numel()) = tb.array();
  n.out = std::move(out);
  return Value{g, g->emit(std::move(n))};
}

Value concat_cols(Value a, Value b) {
  Graph* g = same_graph(a, b);
  const Tensor& ta = g->value(a.id);
  const Tensor& tb = g->value(b.id);
  require(ta.rank() == 2 && tb.rank() == 2 && ta.rows() == tb.rows(), "concat_cols: height mismatch");
  Graph::Node n;
  n.op = OpKind::kConcatCols;
  n.in = {a.id, b.id};
  n.arity = 2;
  Matrix out(ta.rows(), ta.cols() + tb.cols());
  out.leftCols(ta.cols()) = ta.as_matrix();
  out.rightCols(tb.cols()) = tb.as_matrix();
  n.out = Tensor::from_matrix(out);
  return Value{g, g->emit(std::move(n))};
}

Value slice_rows(Value a, Index first, Index count) {
  Graph* g = a.graph;
  const Tensor& ta = g->value(a.id);
  require(ta.rank() == 2, "slice_rows: want rank 2");
  require(first >= 0 && count > 0 && first + count <= ta.rows(), "slice_rows: bad range");
  Graph::Node n;
  n.op = OpKind::kSliceRows;
  n.in = {a.id, 0};
  n.arity = 1;
  n.a0 = first;
  n.a1 = count;
  Matrix out = ta.as_matrix().middleRows(first, count);
  n.out = Tensor::from_matrix(out);
  return Value{g, g->emit(std::move(n))};
}

Value slice_cols(Value a, Index first, Index count) {
  Graph* g = a.graph;
  const Tensor& ta = g->value(a.id);
  require(ta.rank() == 2, "slice_cols: want rank 2");
  require(first >= 0 && count > 0 && first + count <= ta.cols(), "slice_cols: bad range");
  Graph::Node n;
  n.op = OpKind::kSliceCols;
  n.in = {a.id, 0};
  n.arity = 1;
  n.a0 = first;
  n.a1 = count;
  Matrix out = ta.as_matrix().middleCols(first, count);
  n.out = Tensor::from_matrix(out);
  return Value{g, g->emit(std::move(n))};
}

Value outer_flatten(Value z, Value y) {
  Graph* g = same_graph(z, y);
  const Tensor& tz = g->value(z.id);
  const Tensor& ty = g->value(y.id);
  require(tz.rank() == 2 && ty.rank() == 2 && tz.rows() == ty.rows(), "outer_flatten: row mismatch");
  Graph::Node n;
  n.op = OpKind::kOuterFlatten;
  n.in = {z.id, y.id};
  n.arity = 2;
  const Index b = tz.rows(), dz = tz.cols(), c = ty.cols();
  Tensor out({b, dz * c});
  for (Index s = 0; s < b; ++s)
    for (Index i = 0; i < dz; ++i)
      for (Index j = 0; j < c; ++j) out[s * dz * c + i * c + j] = tz[s * dz + i] * ty[s * c + j];
  n.out = std::move(out);
  return Value{g, g->emit(std::move(n))};
}

void Graph::propagate(NodeId id) {
  const Node& n = nodes_[id];
  const Tensor& out = n.out;
  const Tensor& gout = grads_[id];
  switch (n.op) {
    case OpKind::kInput:
      break;
    case OpKind::kMatmul: {
      const Tensor& a = nodes_[n.in[0]].out;
      const Tensor& b = nodes_[n.in[1]].out;
      grads_[n.in[0]].as_matrix().noalias() += gout.as_matrix() * b.as_matrix().transpose();
      grads_[n.in[1]].as_matrix().noalias() += a.as_matrix().transpose() * gout.as_matrix();
      break;
    }
    case OpKind::kAdd:
      grads_[n.in[0]].array() += gout.array();
      grads_[n.in[1]].array() += gout.array();
      break;
    case OpKind::kAddRowvec: {
      grads_[n.in[0]].array() += gout.array();
      Tensor& gv = grads_[n.in[1]];
      Eigen::Map<Eigen::RowVectorXd>(gv.array().data(), gv.numel()) += gout.as_matrix().colwise().sum();
      break;
    }
    case OpKind::kSub:
      grads_[n.in[0]].array() += gout.array();
      grads_[n.in[1]].array() -= gout.array();
      break;
    case OpKind::kMul:
      grads_[n.in[0]].array() += gout.array() * nodes_[n.in[1]].out.array();
      grads_[n.in[1]].array() += gout.array() * nodes_[n.in[0]].out.array();
      break;
    case OpKind::kScale:
      grads_[n.in[0]].array() += n.attr * gout.array();
      break;
    case OpKind::kRelu:
      grads_[n.in[0]].array() += gout.array() * (nodes_[n.in[0]].out.array() > 0.0).cast<double>();
      break;
    case OpKind::kTanh:
      grads_[n.in[0]].array() += gout.array() * (1.0 - out.array().square());
      break;
    case OpKind::kExp:
      grads_[n.in[0]].array() += gout.array() * out.array();
      break;
    case OpKind::kLog:
      grads_[n.in[0]].array() += gout.array() / nodes_[n.in[0]].out.array();
      break;
    case OpKind::kSquare:
      grads_[n.in[0]].array() += gout.array() * 2.0 * nodes_[n.in[0]].out.array();
      break;
    case OpKind::kSigmoid:
      grads_[n.in[0]].array() += gout.array() * out.array() * (1.0 - out.array());
      break;
    case OpKind::kSoftplus: {
      const ArrayX& x = nodes_[n.in[0]].out.array();
      grads_[n.in[0]].array() += gout.array() / (1.0 + (-x).exp());
      break;
    }
    case OpKind::kSoftmax: {
      // dx_i = y_i * (dy_i - sum_j dy_j y_j), per row.
      const Index r = out.rows(), c = out.cols();
      Tensor& gin = grads_[n.in[0]];
      for (Index i = 0; i < r; ++i) {
        double dot = 0.0;
        for (Index j = 0; j < c; ++j) dot += gout[i * c + j] * out[i * c + j];
        for (Index j = 0; j < c; ++j) gin[i * c + j] += out[i * c + j] * (gout[i * c + j] - dot);
      }
      break;
    }
    case OpKind::kLogSoftmax: {
      // dx = dy - softmax(x) * rowsum(dy).
      const Index r = out.rows(), c = out.cols();
      Tensor& gin = grads_[n.in[0]];
      for (Index i = 0; i < r; ++i) {
        double rowsum = 0.0;
        for (Index j = 0; j < c; ++j) rowsum += gout[i * c + j];
        for (Index j = 0; j < c; ++j)
          gin[i * c + j] += gout[i * c + j] - std::exp(out[i * c + j]) * rowsum;
      }
      break;
    }
    case OpKind::kSum:
      grads_[n.in[0]].array() += gout[0];
      break;
    case OpKind::kMean:
      grads_[n.in[0]].array() += gout[0] / static_cast<double>(nodes_[n.in[0]].out.numel());
      break;
    case OpKind::kConcatRows: {
      const Index na = nodes_[n.in[0]].out.numel();
      grads_[n.in[0]].array() += gout.array().head(na);
      grads_[n.in[1]].array() += gout.array().tail(gout.numel() - na);
      break;
    }
    case OpKind::kConcatCols: {
      const Index ca = nodes_[n.in[0]].out.cols();
      grads_[n.in[0]].as_matrix() += gout.as_matrix().leftCols(ca);
      grads_[n.in[1]].as_matrix() += gout.as_matrix().rightCols(gout.cols() - ca);
      break;
    }
    case OpKind::kSliceRows:
      grads_[n.in[0]].as_matrix().middleRows(n.a0, n.a1) += gout.as_matrix();
      break;
    case OpKind::kSliceCols:
      grads_[n.in[0]].as_matrix().middleCols(n.a0, n.a1) += gout.as_matrix();
      break;
    case OpKind::kStopGradient:
      break;
    case OpKind::kGradReversal:
      grads_[n.in[0]].array() += -n.attr * gout.array();
      break;
    case OpKind::kOuterFlatten: {
      const Tensor& z = nodes_[n.in[0]].out;
      const Tensor& y = nodes_[n.in[1]].out;
      Tensor& gz = grads_[n.in[0]];
      Tensor& gy = grads_[n.in[1]];
      const Index b = z.rows(), dz = z.cols(), c = y.cols();
      for (Index s = 0; s < b; ++s)
        for (Index i = 0; i < dz; ++i)
          for (Index j = 0; j < c; ++j) {
            const double go = gout[s * dz * c + i * c + j];
            gz[s * dz + i] += go * y[s * c + j];
            gy[s * c + j] += go * z[s * dz + i];
          }
      break;
    }
  }
}

}  // namespace uda
