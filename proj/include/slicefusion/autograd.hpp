#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "slicefusion/tensor.hpp"

namespace slicefusion {

enum class OpKind : std::uint8_t {
  leaf,
  matmul,
  matmul_bt,
  add,
  add_row_bias,
  scale,
  tanh,
  rms_norm,
  softmax,
  causal_softmax,
  mean_pool,
  max_pool,
  repeat_blocks,
  concat,
  reshape,
  gather_rows,
  slice_rows,
  token_mix,
  avg_pool_grid,
  sum,
  nll_loss,
};

const char* op_name(OpKind kind);

/// Handle to a node of a Graph. Only meaningful for the graph that produced it.
struct Var {
  std::uint32_t id = 0;
};

/// Multiplies the input gradients produced by one op kind. Used by mutation tests
/// to confirm that the gradient checker notices a broken backward rule.
struct GradientFault {
  OpKind kind;
  double scale;
};

/// Reverse-mode tape for one forward pass.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order; backward walks it once from the root down. Parameter and
/// constant leaves may reference external tensors, which must outlive the graph.
class Graph {
 public:
  Graph() = default;
  explicit Graph(GradientFault fault) : fault_(fault) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  Var constant(Tensor value);
  /// Non-owning constant leaf.
  Var constant_ref(const Tensor& value);
  /// Non-owning leaf that receives a gradient.
  Var parameter(const Tensor& value);

  Var matmul(Var a, Var b);
  /// a * b^T
  Var matmul_bt(Var a, Var b);
  Var add(Var a, Var b);
  /// x[m x n] + bias[n] broadcast over rows.
  Var add_row_bias(Var x, Var bias);
  Var scale(Var x, double factor);
  Var tanh(Var x);
  /// Each row divided by its root mean square: x / sqrt(mean(x^2) + 1e-6).
  Var rms_norm(Var x);
  Var softmax(Var v);
  /// Row-wise softmax of x[R x C] where row r may only see columns <= offset + r.
  Var causal_softmax(Var x, std::size_t offset);
  Var mean_pool(Var t, std::size_t axis = 0);
  Var max_pool(Var t, std::size_t axis = 0);
  Var repeat_blocks(Var t, std::size_t factor);
  Var concat(Var a, Var b, std::size_t axis);
  Var reshape(Var x, Shape shape);
  /// Rows of table[V x d] selected by ids.
  Var gather_rows(Var table, std::span<const std::size_t> ids);
  /// Rows [begin, end) along axis 0.
  Var slice_rows(Var x, std::size_t begin, std::size_t end);
  /// y[b] = mix[L x L] * x[b] for x of shape [B x L x D] or [L x D].
  Var token_mix(Var mix, Var x);
  /// Average-pools a row-major (depth, height, width) token grid by `factor` on every axis.
  Var avg_pool_grid(Var x, std::size_t depth, std::size_t height, std::size_t width, std::size_t factor);
  Var sum(Var x);
  /// Sum over rows of -log softmax(logits[i])[targets[i]].
  Var nll_loss(Var logits, std::span<const std::size_t> targets);

  /// Accumulates d(root)/d(node) into every node that requires a gradient.
  void backward(Var root);

  const Tensor& value(Var v) const;
  /// Gradient after backward; an all-zero tensor when the node was unreachable.
  const Tensor& grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  OpKind kind(Var v) const { return nodes_.at(v.id).kind; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    OpKind kind = OpKind::leaf;
    std::uint32_t in0 = 0, in1 = 0;
    std::uint8_t n_inputs = 0;
    bool requires_grad = false;
    Tensor owned;
    const Tensor* external = nullptr;
    Tensor grad;
    std::size_t aux[4] = {0, 0, 0, 0};
    double scalar = 0.0;
    std::vector<std::size_t> index;
    const Tensor& value() const { return external ? *external : owned; }
  };

  Var push(Node node);
  Node& node(Var v) { return nodes_.at(v.id); }
  const Node& node(Var v) const { return nodes_.at(v.id); }
  Tensor& grad_slot(std::uint32_t id);
  void backward_node(std::uint32_t id);

  std::vector<Node> nodes_;
  std::optional<GradientFault> fault_;
  mutable Tensor zero_grad_;
};

}  // namespace slicefusion
