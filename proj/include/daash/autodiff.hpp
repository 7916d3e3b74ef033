#pragma once

#include "daash/tensor.hpp"

#include <functional>
#include <initializer_list>
#include <vector>

namespace daash {

/// Operation kinds recorded on a Graph.
enum class Op {
  Leaf,
  Add,
  Sub,
  Mul,
  Div,
  Scale,
  AddScalar,
  MatMul,
  Conv2d,
  BiasAdd,
  Relu,
  Tanh,
  Exp,
  Log,
  Mean,
  Sum,
  SumLastAxis,
  Softmax,
  LogSoftmax,
  Clamp,
  Sign,
  GaussianBlur,
  AvgPool,
  Reshape,
};

const char* op_name(Op op);

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, int id) : graph_(graph), id_(id) {}

  Graph& graph() const { return *graph_; }
  int id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  Graph* graph_ = nullptr;
  int id_ = -1;
};

/// Gradient of a scalar loss with respect to every node that requires one.
class Gradients {
 public:
  explicit Gradients(std::vector<Tensor> grads) : grads_(std::move(grads)) {}
  /// Zero tensor of the right shape if the loss does not depend on `v`.
  const Tensor& operator[](Var v) const;

 private:
  std::vector<Tensor> grads_;
};

/// Define-by-run tape. Nodes are appended in topological order; backward()
/// walks them in reverse, so each reachable node is visited once.
class Graph {
 public:
  /// Supplies accumulation buffers for parent gradients during backward.
  /// Returns nullptr for parents that do not need a gradient.
  class Sink {
   public:
    Tensor* operator()(std::size_t parent);

   private:
    friend class Graph;
    Sink(Graph& g, std::vector<Tensor>& grads, int node) : graph_(g), grads_(grads), node_(node) {}
    Graph& graph_;
    std::vector<Tensor>& grads_;
    int node_;
  };

  using BackwardFn = std::function<void(const Graph&, const std::vector<int>& parents, const Tensor& self,
                                        const Tensor& grad_out, Sink& sink)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf that gradients are computed for.
  Var variable(Tensor value);
  /// Leaf treated as a constant.
  Var constant(Tensor value);

  const Tensor& value(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id())).value; }
  Op kind(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id())).op; }
  const std::vector<int>& parents(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id())).parents; }
  bool requires_grad(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id())).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Appends a node. The value is checked for NaN/Inf.
  Var record(Op op, std::vector<int> parents, Tensor value, BackwardFn backward);

  /// Reverse-mode sweep from a scalar loss. Paths that reach the same node
  /// accumulate.
  Gradients backward(Var loss);

 private:
  struct Node {
    Op op;
    std::vector<int> parents;
    Tensor value;
    BackwardFn backward;
    bool requires_grad;
  };
  std::vector<Node> nodes_;
};

// Element-wise ops require identical shapes (no broadcasting).
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var relu(Var a);
Var tanh(Var a);
Var exp(Var a);
Var log(Var a);
/// Zero gradient everywhere, including at 0.
Var sign(Var a);
/// Gradient passes only where lo < a < hi.
Var clamp(Var a, double lo, double hi);

Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator*(double s, Var a);

/// 2-D matrix product (m x k)(k x n).
Var matmul(Var a, Var b);
/// x: (B, Cin, H, W), w: (Cout, Cin, k, k). Stride 1, zero padding `pad`
/// (defaults to k/2, keeping H and W).
Var conv2d(Var x, Var w, Index pad = -1);
/// Adds b[c] along axis 1 of x.
Var bias_add(Var x, Var b);
Var reshape(Var a, Shape shape);

Var sum(Var a);
Var mean(Var a);
/// (..., n) -> (...)
Var sum_last_axis(Var a);
Var softmax(Var a);
Var log_softmax(Var a);

/// Depthwise k x k Gaussian filter, zero padding, same size output. Kernel
/// is normalised to sum to 1.
Var gaussian_blur(Var x, Index k, double sigma);
/// Mean over k x k windows of each (B, C) plane, valid positions only.
Var avg_pool(Var x, Index k, Index stride);
Var avg_pool(Var x, Index kh, Index kw, Index stride);

/// Generic dispatch for parameter-free kinds.
Var record(Op op, std::initializer_list<Var> inputs);

/// Normalised 1-D Gaussian taps of length k.
std::vector<double> gaussian_taps(Index k, double sigma);

}  // namespace daash
