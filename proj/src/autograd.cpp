#include "slicefusion/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace slicefusion {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::matmul: return "matmul";
    case OpKind::matmul_bt: return "matmul_bt";
    case OpKind::add: return "add";
    case OpKind::add_row_bias: return "add_row_bias";
    case OpKind::scale: return "scale";
    case OpKind::tanh: return "tanh";
    case OpKind::rms_norm: return "rms_norm";
    case OpKind::softmax: return "softmax";
    case OpKind::causal_softmax: return "causal_softmax";
    case OpKind::mean_pool: return "mean_pool";
    case OpKind::max_pool: return "max_pool";
    case OpKind::repeat_blocks: return "repeat_blocks";
    case OpKind::concat: return "concat";
    case OpKind::reshape: return "reshape";
    case OpKind::gather_rows: return "gather_rows";
    case OpKind::slice_rows: return "slice_rows";
    case OpKind::token_mix: return "token_mix";
    case OpKind::avg_pool_grid: return "avg_pool_grid";
    case OpKind::sum: return "sum";
    case OpKind::nll_loss: return "nll_loss";
  }
  return "unknown";
}

namespace {

void add_into(Tensor& dst, const Tensor& src) {
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

struct AxisView {
  std::size_t outer = 1, extent = 0, inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis) {
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

// Row-major (d, h, w) grid pooled by `f` on each axis.
std::size_t pooled_index(std::size_t d, std::size_t h, std::size_t w, std::size_t f, std::size_t ph,
                         std::size_t pw) {
  return ((d / f) * ph + h / f) * pw + w / f;
}

}  // namespace

Var Graph::push(Node n) {
  if (nodes_.size() >= std::numeric_limits<std::uint32_t>::max()) throw std::length_error("graph too large");
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Graph::constant(Tensor value) {
  Node n;
  n.owned = std::move(value);
  return push(std::move(n));
}

Var Graph::constant_ref(const Tensor& value) {
  Node n;
  n.external = &value;
  return push(std::move(n));
}

Var Graph::parameter(const Tensor& value) {
  Node n;
  n.external = &value;
  n.requires_grad = true;
  return push(std::move(n));
}

const Tensor& Graph::value(Var v) const { return node(v).value(); }

const Tensor& Graph::grad(Var v) const {
  const Node& n = node(v);
  if (!n.grad.empty() && n.grad.shape() == n.value().shape()) return n.grad;
  zero_grad_ = Tensor::zeros(n.value().shape());
  return zero_grad_;
}

Tensor& Graph::grad_slot(std::uint32_t id) {
  Node& n = nodes_[id];
  if (n.grad.shape() != n.value().shape()) n.grad = Tensor::zeros(n.value().shape());
  return n.grad;
}

// ---------------------------------------------------------------------------
// forward

Var Graph::matmul(Var a, Var b) {
  Node n;
  n.kind = OpKind::matmul;
  n.owned = slicefusion::matmul(value(a), value(b));
  n.in0 = a.id;
  n.in1 = b.id;
  n.n_inputs = 2;
  n.requires_grad = requires_grad(a) || requires_grad(b);
  return push(std::move(n));
}

Var Graph::matmul_bt(Var a, Var b) {
  Node n;
  n.kind = OpKind::matmul_bt;
  n.owned = slicefusion::matmul_bt(value(a), value(b));
  n.in0 = a.id;
  n.in1 = b.id;
  n.n_inputs = 2;
  n.requires_grad = requires_grad(a) || requires_grad(b);
  return push(std::move(n));
}

Var Graph::add(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  if (ta.shape() != tb.shape()) throw ShapeError("add: " + shape_str(ta.shape()) + " vs " + shape_str(tb.shape()));
  Node n;
  n.kind = OpKind::add;
  n.owned = ta;
  add_into(n.owned, tb);
  n.in0 = a.id;
  n.in1 = b.id;
  n.n_inputs = 2;
  n.requires_grad = requires_grad(a) || requires_grad(b);
  return push(std::move(n));
}

Var Graph::add_row_bias(Var x, Var bias) {
  const Tensor& tx = value(x);
  const Tensor& tb = value(bias);
  if (tx.rank() != 2 || tb.size() != tx.dim(1)) {
    throw ShapeError("add_row_bias: " + shape_str(tx.shape()) + " + " + shape_str(tb.shape()));
  }
  Node n;
  n.kind = OpKind::add_row_bias;
  n.owned = tx;
  const std::size_t cols = tx.dim(1);
  for (std::size_t r = 0; r < tx.dim(0); ++r)
    for (std::size_t c = 0; c < cols; ++c) n.owned[r * cols + c] += tb[c];
  n.in0 = x.id;
  n.in1 = bias.id;
  n.n_inputs = 2;
  n.requires_grad = requires_grad(x) || requires_grad(bias);
  return push(std::move(n));
}

Var Graph::scale(Var x, double factor) {
  Node n;
  n.kind = OpKind::scale;
  n.owned = value(x);
  for (auto& e : n.owned.data()) e *= factor;
  n.scalar = factor;
  n.in0 = x.id;
  n.n_inputs = 1;
  n.requires_grad = requires_grad(x);
  return push(std::move(n));
}

Var Graph::tanh(Var x) {
  Node n;
  n.kind = OpKind::tanh;
  n.owned = value(x);
  for (auto& e : n.owned.data()) e = std::tanh(e);
  n.in0 = x.id;
  n.n_inputs = 1;
  n.requires_grad = requires_grad(x);
  return push(std::move(n));
}

namespace {

constexpr double kRmsEps = 1e-6;

std::size_t row_width(const Tensor& t) { return t.rank() == 0 ? 1 : t.dim(t.rank() - 1); }

}  // namespace

Var Graph::rms_norm(Var x) {
  const Tensor& in = value(x);
  const std::size_t cols = row_width(in);
  if (cols == 0 || in.size() == 0) throw ShapeError("rms_norm: empty rows " + shape_str(in.shape()));
  Node n;
  n.kind = OpKind::rms_norm;
  n.owned = in;
  auto d = n.owned.data();
  for (std::size_t r = 0; r < d.size() / cols; ++r) {
    double ss = 0.0;
    for (std::size_t c = 0; c < cols; ++c) ss += d[r * cols + c] * d[r * cols + c];
    const double inv = 1.0 / std::sqrt(ss / static_cast<double>(cols) + kRmsEps);
    for (std::size_t c = 0; c < cols; ++c) d[r * cols + c] *= inv;
  }
  n.in0 = x.id;
  n.n_inputs = 1;
  n.requires_grad = requires_grad(x);
  return push(std::move(n));
}

Var Graph::softmax(Var v) {
  Node n;
  n.kind = OpKind::softmax;
  n.owned = slicefusion::softmax(value(v));
  n.in0 = v.id;
  n.n_inputs = 1;
  n.requires_grad = requires_grad(v);
  return push(std::move(n));
}

Var Graph::causal_softmax(Var x, std::size_t offset) {
  const Tensor& tx = value(x);
  if (tx.rank() != 2) throw ShapeError("causal_softmax: expected a matrix, got " + shape_str(tx.shape()));
  const std::size_t rows = tx.dim(0), cols = tx.dim(1);
  if (offset >= cols) throw ShapeError("causal_softmax: offset leaves no visible column");
  Node n;
  n.kind = OpKind::causal_softmax;
  n.owned = Tensor::zeros(tx.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t visible = std::min(cols, offset + r + 1);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < visible; ++c) mx = std::max(mx, tx[r * cols + c]);
    double total = 0.0;
    for (std::size_t c = 0; c < visible; ++c) {
      const double e = std::exp(tx[r * cols + c] - mx);
      n.owned[r * cols + c] = e;
      total += e;
    }
    for (std::size_t c = 0; c < visible; ++c) n.owned[r * cols + c] /= total;
  }
  n.aux[0] = offset;
  n.in0 = x.id;
  n.n_inputs = 1;
  n.requires_grad = requires_grad(x);
  return push(std::move(n));
}

Var Graph::mean_pool(Var t, std::size_t axis) {
  Node n;
  n.kind = OpKind::mean_pool;
  n.owned = slicefusion::mean_pool(value(t), axis);
  n.aux[0] = axis;
  n.in0 = t.id;
  n.n_inputs = 1;
  n.requires_grad = requires_grad(t);
  return push(std::move(n));
}

Var Graph::max_pool(Var t, std::size_t axis) {
  Node n;
  n.kind = OpKind::max_pool;
  n.owned = slicefusion::max_pool(value(t), axis);
  n.index = max_pool_argmax(value(t), axis);
  n.aux[0] = axis;
  n.in0 = t.id;
  n.n_inputs = 1;
  n.requires_grad = requires_grad(t);
  return push(std::move(n));
}

Var Graph::repeat_blocks(Var t, std::size_t factor) {
  Node n;
  n.kind = OpKind::repeat_blocks;
  n.owned = slicefusion::repeat_blocks(value(t), factor);
  n.aux[0] = factor;
  n.in0 = t.id;
  n.n_inputs = 1;
  n.requires_grad = requires_grad(t);
  return push(std::move(n));
}

Var Graph::concat(Var a, Var b, std::size_t axis) {
  Node n;
  n.kind = OpKind::concat;
  n.owned = slicefusion::concat(value(a), value(b), axis);
  n.aux[0] = axis;
  n.in0 = a.id;
  n.in1 = b.id;
  n.n_inputs = 2;
  n.requires_grad = requires_grad(a) || requires_grad(b);
  return push(std::move(n));
}

Var Graph::reshape(Var x, Shape shape) {
  Node n;
  n.kind = OpKind::reshape;
  n.owned = value(x).reshaped(std::move(shape));
  n.in0 = x.id;
  n.n_inputs = 1;
  n.requires_grad = requires_grad(x);
  return push(std::move(n));
}

Var Graph::gather_rows(Var table, std::span<const std::size_t> ids) {
  const Tensor& tt = value(table);
  if (tt.rank() != 2) throw ShapeError("gather_rows: expected a matrix table, got " + shape_str(tt.shape()));
  const std::size_t width = tt.dim(1);
  Node n;
  n.kind = OpKind::gather_rows;
  n.owned = Tensor({ids.size(), width});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= tt.dim(0)) {
      throw std::out_of_range("gather_rows: id " + std::to_string(ids[i]) + " >= " + std::to_string(tt.dim(0)));
    }
    std::copy_n(tt.data().begin() + static_cast<std::ptrdiff_t>(ids[i] * width), width,
                n.owned.data().begin() + static_cast<std::ptrdiff_t>(i * width));
  }
  n.index.assign(ids.begin(), ids.end());
  n.in0 = table.id;
  n.n_inputs = 1;
  n.requires_grad = requires_grad(table);
  return push(std::move(n));
}

Var Graph::slice_rows(Var x, std::size_t begin, std::size_t end) {
  const Tensor& tx = value(x);
  if (tx.rank() == 0 || begin >= end || end > tx.dim(0)) {
    throw ShapeError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) + ") of " +
                     shape_str(tx.shape()));
  }
  const std::size_t row = tx.size() / tx.dim(0);
  Shape shape = tx.shape();
  shape[0] = end - begin;
  std::vector<double> data(tx.data().begin() + static_cast<std::ptrdiff_t>(begin * row),
                           tx.data().begin() + static_cast<std::ptrdiff_t>(end * row));
  Node n;
  n.kind = OpKind::slice_rows;
  n.owned = Tensor(std::move(shape), std::move(data));
  n.aux[0] = begin;
  n.in0 = x.id;
  n.n_inputs = 1;
  n.requires_grad = requires_grad(x);
  return push(std::move(n));
}

Var Graph::token_mix(Var mix, Var x) {
  const Tensor& tm = value(mix);
  const Tensor& tx = value(x);
  if (tm.rank() != 2 || tm.dim(0) != tm.dim(1) || (tx.rank() != 2 && tx.rank() != 3)) {
    throw ShapeError("token_mix: " + shape_str(tm.shape()) + " with " + shape_str(tx.shape()));
  }
  const std::size_t batch = tx.rank() == 3 ? tx.dim(0) : 1;
  const std::size_t len = tx.rank() == 3 ? tx.dim(1) : tx.dim(0);
  const std::size_t width = tx.dim(tx.rank() - 1);
  if (tm.dim(0) != len) throw ShapeError("token_mix: " + shape_str(tm.shape()) + " with " + shape_str(tx.shape()));
  Node n;
  n.kind = OpKind::token_mix;
  n.owned = Tensor::zeros(tx.shape());
  for (std::size_t b = 0; b < batch; ++b) {
    const double* xb = tx.data().data() + b * len * width;
    double* yb = n.owned.data().data() + b * len * width;
    for (std::size_t i = 0; i < len; ++i)
      for (std::size_t p = 0; p < len; ++p) {
        const double m = tm[i * len + p];
        for (std::size_t c = 0; c < width; ++c) yb[i * width + c] += m * xb[p * width + c];
      }
  }
  n.aux[0] = batch;
  n.aux[1] = len;
  n.aux[2] = width;
  n.in0 = mix.id;
  n.in1 = x.id;
  n.n_inputs = 2;
  n.requires_grad = requires_grad(mix) || requires_grad(x);
  return push(std::move(n));
}

Var Graph::avg_pool_grid(Var x, std::size_t depth, std::size_t height, std::size_t width, std::size_t factor) {
  const Tensor& tx = value(x);
  if (factor == 0 || tx.rank() != 2 || tx.dim(0) != depth * height * width || depth % factor || height % factor ||
      width % factor) {
    throw ShapeError("avg_pool_grid: grid " + std::to_string(depth) + "x" + std::to_string(height) + "x" +
                     std::to_string(width) + " / " + std::to_string(factor) + " incompatible with " +
                     shape_str(tx.shape()));
  }
  const std::size_t pd = depth / factor, ph = height / factor, pw = width / factor, cols = tx.dim(1);
  const double inv = 1.0 / static_cast<double>(factor * factor * factor);
  Node n;
  n.kind = OpKind::avg_pool_grid;
  n.owned = Tensor::zeros({pd * ph * pw, cols});
  for (std::size_t d = 0; d < depth; ++d)
    for (std::size_t h = 0; h < height; ++h)
      for (std::size_t w = 0; w < width; ++w) {
        const std::size_t src = (d * height + h) * width + w;
        const std::size_t dst = pooled_index(d, h, w, factor, ph, pw);
        for (std::size_t c = 0; c < cols; ++c) n.owned[dst * cols + c] += inv * tx[src * cols + c];
      }
  n.aux[0] = depth;
  n.aux[1] = height;
  n.aux[2] = width;
  n.aux[3] = factor;
  n.in0 = x.id;
  n.n_inputs = 1;
  n.requires_grad = requires_grad(x);
  return push(std::move(n));
}

Var Graph::sum(Var x) {
  double total = 0.0;
  for (double e : value(x).data()) total += e;
  Node n;
  n.kind = OpKind::sum;
  n.owned = Tensor({1}, total);
  n.in0 = x.id;
  n.n_inputs = 1;
  n.requires_grad = requires_grad(x);
  return push(std::move(n));
}

Var Graph::nll_loss(Var logits, std::span<const std::size_t> targets) {
  const Tensor& tl = value(logits);
  if (tl.rank() != 2 || tl.dim(0) != targets.size()) {
    throw ShapeError("nll_loss: logits " + shape_str(tl.shape()) + " vs " + std::to_string(targets.size()) +
                     " targets");
  }
  const std::size_t vocab = tl.dim(1);
  double total = 0.0;
  for (std::size_t r = 0; r < targets.size(); ++r) {
    if (targets[r] >= vocab) throw std::out_of_range("nll_loss: target id out of range");
    const double* row = tl.data().data() + r * vocab;
    const double mx = *std::max_element(row, row + vocab);
    double z = 0.0;
    for (std::size_t c = 0; c < vocab; ++c) z += std::exp(row[c] - mx);
    total += (std::log(z) + mx) - row[targets[r]];
  }
  Node n;
  n.kind = OpKind::nll_loss;
  n.owned = Tensor({1}, total);
  n.index.assign(targets.begin(), targets.end());
  n.in0 = logits.id;
  n.n_inputs = 1;
  n.requires_grad = requires_grad(logits);
  return push(std::move(n));
}

// ---------------------------------------------------------------------------
// backward

void Graph::backward(Var root) {
  if (value(root).size() != 1) throw ShapeError("backward: root must be scalar, got " + shape_str(value(root).shape()));
  for (auto& n : nodes_) n.grad = Tensor();
  if (!requires_grad(root)) return;
  grad_slot(root.id)[0] = 1.0;
  for (std::uint32_t id = root.id + 1; id-- > 0;) {
    const Node& n = nodes_[id];
    if (n.kind == OpKind::leaf || !n.requires_grad || n.grad.empty()) continue;
    backward_node(id);
  }
}

void Graph::backward_node(std::uint32_t id) {
  // Input gradients are computed into locals first: grad_slot may reallocate
  // another node's grad, but never moves nodes_.
  const Node& n = nodes_[id];
  const Tensor& g = n.grad;
  const Tensor& out = n.value();
  const double fault = (fault_ && fault_->kind == n.kind) ? fault_->scale : 1.0;
  auto accumulate = [&](std::uint32_t input, const Tensor& contribution) {
    if (!nodes_[input].requires_grad) return;
    Tensor& slot = grad_slot(input);
    auto d = slot.data();
    auto s = contribution.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += fault * s[i];
  };
  auto needs = [&](std::uint32_t input) { return nodes_[input].requires_grad; };

  switch (n.kind) {
    case OpKind::leaf:
      break;
    case OpKind::matmul: {
      const Tensor& a = nodes_[n.in0].value();
      const Tensor& b = nodes_[n.in1].value();
      if (needs(n.in0)) accumulate(n.in0, slicefusion::matmul_bt(g, b));
      if (needs(n.in1)) accumulate(n.in1, slicefusion::matmul_at(a, g));
      break;
    }
    case OpKind::matmul_bt: {
      const Tensor& a = nodes_[n.in0].value();
      const Tensor& b = nodes_[n.in1].value();
      if (needs(n.in0)) accumulate(n.in0, slicefusion::matmul(g, b));
      if (needs(n.in1)) accumulate(n.in1, slicefusion::matmul_at(g, a));
      break;
    }
    case OpKind::add:
      accumulate(n.in0, g);
      accumulate(n.in1, g);
      break;
    case OpKind::add_row_bias: {
      accumulate(n.in0, g);
      if (needs(n.in1)) {
        const std::size_t cols = g.dim(1);
        Tensor gb({cols});
        for (std::size_t r = 0; r < g.dim(0); ++r)
          for (std::size_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
        accumulate(n.in1, gb.reshaped(nodes_[n.in1].value().shape()));
      }
      break;
    }
    case OpKind::scale: {
      Tensor gx = g;
      for (auto& e : gx.data()) e *= n.scalar;
      accumulate(n.in0, gx);
      break;
    }
    case OpKind::tanh: {
      Tensor gx = g;
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= 1.0 - out[i] * out[i];
      accumulate(n.in0, gx);
      break;
    }
    case OpKind::rms_norm: {
      const Tensor& in = nodes_[n.in0].value();
      const std::size_t cols = row_width(in);
      Tensor gx(g.shape());
      for (std::size_t r = 0; r < g.size() / cols; ++r) {
        double ss = 0.0, gy = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
          ss += in[r * cols + c] * in[r * cols + c];
          gy += g[r * cols + c] * out[r * cols + c];
        }
        const double inv = 1.0 / std::sqrt(ss / static_cast<double>(cols) + kRmsEps);
        gy /= static_cast<double>(cols);
        for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] = inv * (g[r * cols + c] - out[r * cols + c] * gy);
      }
      accumulate(n.in0, gx);
      break;
    }
    case OpKind::softmax: {
      double dot = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * out[i];
      Tensor gx(g.shape());
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] = out[i] * (g[i] - dot);
      accumulate(n.in0, gx);
      break;
    }
    case OpKind::causal_softmax: {
      const std::size_t rows = out.dim(0), cols = out.dim(1), offset = n.aux[0];
      Tensor gx(out.shape());
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t visible = std::min(cols, offset + r + 1);
        double dot = 0.0;
        for (std::size_t c = 0; c < visible; ++c) dot += g[r * cols + c] * out[r * cols + c];
        for (std::size_t c = 0; c < visible; ++c) gx[r * cols + c] = out[r * cols + c] * (g[r * cols + c] - dot);
      }
      accumulate(n.in0, gx);
      break;
    }
    case OpKind::mean_pool: {
      const Tensor& in = nodes_[n.in0].value();
      const auto v = axis_view(in.shape(), n.aux[0]);
      const double inv = 1.0 / static_cast<double>(v.extent);
      Tensor gx(in.shape());
      for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t e = 0; e < v.extent; ++e)
          for (std::size_t i = 0; i < v.inner; ++i) gx[(o * v.extent + e) * v.inner + i] = inv * g[o * v.inner + i];
      accumulate(n.in0, gx);
      break;
    }
    case OpKind::max_pool: {
      const Tensor& in = nodes_[n.in0].value();
      const auto v = axis_view(in.shape(), n.aux[0]);
      Tensor gx(in.shape());
      for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t i = 0; i < v.inner; ++i) {
          const std::size_t k = o * v.inner + i;
          gx[(o * v.extent + n.index[k]) * v.inner + i] += g[k];
        }
      accumulate(n.in0, gx);
      break;
    }
    case OpKind::repeat_blocks: {
      const Tensor& in = nodes_[n.in0].value();
      const std::size_t factor = n.aux[0];
      const std::size_t row = in.size() / in.dim(0);
      Tensor gx(in.shape());
      for (std::size_t j = 0; j < out.dim(0); ++j)
        for (std::size_t c = 0; c < row; ++c) gx[(j / factor) * row + c] += g[j * row + c];
      accumulate(n.in0, gx);
      break;
    }
    case OpKind::concat: {
      const Tensor& a = nodes_[n.in0].value();
      const Tensor& b = nodes_[n.in1].value();
      const std::size_t axis = n.aux[0];
      const auto va = axis_view(a.shape(), axis);
      const auto vb = axis_view(b.shape(), axis);
      const std::size_t ca = va.extent * va.inner, cb = vb.extent * vb.inner;
      Tensor ga(a.shape()), gb(b.shape());
      for (std::size_t o = 0; o < va.outer; ++o) {
        std::copy_n(g.data().begin() + static_cast<std::ptrdiff_t>(o * (ca + cb)), ca,
                    ga.data().begin() + static_cast<std::ptrdiff_t>(o * ca));
        std::copy_n(g.data().begin() + static_cast<std::ptrdiff_t>(o * (ca + cb) + ca), cb,
                    gb.data().begin() + static_cast<std::ptrdiff_t>(o * cb));
      }
      accumulate(n.in0, ga);
      accumulate(n.in1, gb);
      break;
    }
    case OpKind::reshape:
      accumulate(n.in0, g.reshaped(nodes_[n.in0].value().shape()));
      break;
    case OpKind::gather_rows: {
      const Tensor& table = nodes_[n.in0].value();
      const std::size_t width = table.dim(1);
      Tensor gt(table.shape());
      for (std::size_t i = 0; i < n.index.size(); ++i)
        for (std::size_t c = 0; c < width; ++c) gt[n.index[i] * width + c] += g[i * width + c];
      accumulate(n.in0, gt);
      break;
    }
    case OpKind::slice_rows: {
      const Tensor& in = nodes_[n.in0].value();
      const std::size_t row = in.size() / in.dim(0);
      Tensor gx(in.shape());
      std::copy(g.data().begin(), g.data().end(), gx.data().begin() + static_cast<std::ptrdiff_t>(n.aux[0] * row));
      accumulate(n.in0, gx);
      break;
    }
    case OpKind::token_mix: {
      const Tensor& mix = nodes_[n.in0].value();
      const Tensor& x = nodes_[n.in1].value();
      const std::size_t batch = n.aux[0], len = n.aux[1], width = n.aux[2];
      if (needs(n.in0)) {
        Tensor gm(mix.shape());
        for (std::size_t b = 0; b < batch; ++b) {
          const double* xb = x.data().data() + b * len * width;
          const double* gb = g.data().data() + b * len * width;
          for (std::size_t i = 0; i < len; ++i)
            for (std::size_t p = 0; p < len; ++p) {
              double acc = 0.0;
              for (std::size_t c = 0; c < width; ++c) acc += gb[i * width + c] * xb[p * width + c];
              gm[i * len + p] += acc;
            }
        }
        accumulate(n.in0, gm);
      }
      if (needs(n.in1)) {
        Tensor gx(x.shape());
        for (std::size_t b = 0; b < batch; ++b) {
          const double* gb = g.data().data() + b * len * width;
          double* dxb = gx.data().data() + b * len * width;
          for (std::size_t i = 0; i < len; ++i)
            for (std::size_t p = 0; p < len; ++p) {
              const double m = mix[i * len + p];
              for (std::size_t c = 0; c < width; ++c) dxb[p * width + c] += m * gb[i * width + c];
            }
        }
        accumulate(n.in1, gx);
      }
      break;
    }
    case OpKind::avg_pool_grid: {
      const Tensor& in = nodes_[n.in0].value();
      const std::size_t depth = n.aux[0], height = n.aux[1], width = n.aux[2], factor = n.aux[3];
      const std::size_t ph = height / factor, pw = width / factor, cols = in.dim(1);
      const double inv = 1.0 / static_cast<double>(factor * factor * factor);
      Tensor gx(in.shape());
      for (std::size_t d = 0; d < depth; ++d)
        for (std::size_t h = 0; h < height; ++h)
          for (std::size_t w = 0; w < width; ++w) {
            const std::size_t src = (d * height + h) * width + w;
            const std::size_t dst = pooled_index(d, h, w, factor, ph, pw);
            for (std::size_t c = 0; c < cols; ++c) gx[src * cols + c] = inv * g[dst * cols + c];
          }
      accumulate(n.in0, gx);
      break;
    }
    case OpKind::sum: {
      Tensor gx(nodes_[n.in0].value().shape(), g[0]);
      accumulate(n.in0, gx);
      break;
    }
    case OpKind::nll_loss: {
      const Tensor& logits = nodes_[n.in0].value();
      const std::size_t vocab = logits.dim(1);
      Tensor gx(logits.shape());
      for (std::size_t r = 0; r < n.index.size(); ++r) {
        const double* row = logits.data().data() + r * vocab;
        const double mx = *std::max_element(row, row + vocab);
        double z = 0.0;
        for (std::size_t c = 0; c < vocab; ++c) z += std::exp(row[c] - mx);
        for (std::size_t c = 0; c < vocab; ++c) gx[r * vocab + c] = g[0] * std::exp(row[c] - mx) / z;
        gx[r * vocab + n.index[r]] -= g[0];
      }
      accumulate(n.in0, gx);
      break;
    }
  }
}

}  // namespace slicefusion
