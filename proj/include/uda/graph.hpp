#pragma once

#include "uda/tensor.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace uda {

using NodeId = std::size_t;

enum class OpKind : std::uint8_t {
  kInput,
  kMatmul,
  kAdd,
  kAddRowvec,
  kSub,
  kMul,
  kScale,
  kRelu,
  kTanh,
  kExp,
  kLog,
  kSquare,
  kSigmoid,
  kSoftplus,
  kSoftmax,
  kLogSoftmax,
  kSum,
  kMean,
  kConcatRows,
  kConcatCols,
  kSliceRows,
  kSliceCols,
  kStopGradient,
  kGradReversal,
  kOuterFlatten,
};

const char* op_name(OpKind k);

class Graph;

/// Lightweight handle to a graph node; free functions below compose these
/// into expressions.
struct Value {
  Graph* graph = nullptr;
  NodeId id = 0;

  const Tensor& tensor() const;
  double scalar() const;
};

/// Append-only tape of primitive operations. Forward values are computed
/// eagerly on node creation; backward(root) fills a gradient per node.
class Graph {
 public:
  struct Node {
    OpKind op;
    std::array<NodeId, 2> in{0, 0};
    std::uint8_t arity = 0;
    Tensor out;
    double attr = 0.0;  // scale factor / grad-reversal lambda
    Index a0 = 0;       // slice offset
    Index a1 = 0;       // slice extent
  };

  Value input(Tensor t);

  /// Extension point for the primitive free functions; validates finiteness.
  NodeId emit(Node n);

  /// Reverse-mode sweep from a scalar root. Gradients of all nodes are
  /// (re)initialized to zeros of their output shape; grad(root) == 1.
  void backward(NodeId root);
  void backward(Value root) { backward(root.id); }

  const Tensor& value(NodeId id) const { return nodes_[id].out; }
  const Tensor& grad(NodeId id) const;
  std::size_t size() const { return nodes_.size(); }

 private:
  void propagate(NodeId id);

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  bool grads_valid_ = false;
};

Value matmul(Value a, Value b);
Value add(Value a, Value b);
Value add_rowvec(Value m, Value v);
Value sub(Value a, Value b);
Value mul(Value a, Value b);
Value scale(Value a, double c);
Value relu(Value a);
Value tanh(Value a);
Value exp(Value a);
Value log(Value a);
Value square(Value a);
Value sigmoid(Value a);
Value softplus(Value a);
Value softmax(Value a);
Value log_softmax(Value a);
Value sum(Value a);
Value mean(Value a);
Value concat_rows(Value a, Value b);
Value concat_cols(Value a, Value b);
Value slice_rows(Value a, Index first, Index count);
Value slice_cols(Value a, Index first, Index count);
Value stop_gradient(Value a);
Value grad_reversal(Value a, double lambda);
Value outer_flatten(Value z, Value y);

inline Value operator+(Value a, Value b) { return add(a, b); }
inline Value operator-(Value a, Value b) { return sub(a, b); }
inline Value operator*(Value a, Value b) { return mul(a, b); }
inline Value operator*(double c, Value a) { return scale(a, c); }
inline Value operator*(Value a, double c) { return scale(a, c); }

/// Raised when an operation produces a shape mismatch, a domain error, or a
/// nonfinite result.
class GraphError : public std::runtime_error {
 public:
  explicit GraphError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace uda
