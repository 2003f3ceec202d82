#include "slicefusion/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace slicefusion {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size()) {
    throw ShapeError("tensor shape " + shape_str(shape_) + " does not match " + std::to_string(data_.size()) +
                     " values");
  }
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t m = rows.size();
  const std::size_t n = m ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(m * n);
  for (const auto& row : rows) {
    if (row.size() != n) throw ShapeError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({m, n}, std::move(data));
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("max_abs_diff: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

namespace {

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
}

// Views an arbitrary tensor as [outer, extent(axis), inner].
struct AxisView {
  std::size_t outer = 1, extent = 0, inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
  }
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  if (v.extent == 0) throw ShapeError(std::string(op) + ": zero-extent axis in " + shape_str(shape));
  return v;
}

Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < shape.size(); ++i)
    if (i != axis) out.push_back(shape[i]);
  if (out.empty()) out.push_back(1);
  return out;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) throw ShapeError("matmul: shape mismatch " + shape_str(a.shape()) + " * " + shape_str(b.shape()));
  Tensor out({m, n});
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = po + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      if (av == 0.0) continue;
      const double* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

Tensor matmul_bt(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_bt");
  require_matrix(b, "matmul_bt");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw ShapeError("matmul_bt: shape mismatch " + shape_str(a.shape()) + " * " + shape_str(b.shape()) + "^T");
  }
  Tensor out({m, n});
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = pa + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = pb + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      po[i * n + j] = acc;
    }
  }
  return out;
}

Tensor matmul_at(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_at");
  require_matrix(b, "matmul_at");
  const std::size_t k = a.dim(0), m = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul_at: shape mismatch " + shape_str(a.shape()) + "^T * " + shape_str(b.shape()));
  }
  Tensor out({m, n});
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = pa + p * m;
    const double* brow = pb + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* orow = po + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

Tensor softmax(const Tensor& v) {
  if (v.rank() != 1) throw ShapeError("softmax: expected a vector, got " + shape_str(v.shape()));
  if (v.empty()) throw ShapeError("softmax: empty input");
  const double mx = *std::max_element(v.data().begin(), v.data().end());
  Tensor out(v.shape());
  double total = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - mx);
    total += out[i];
  }
  for (std::size_t i = 0; i < v.size(); ++i) out[i] /= total;
  return out;
}

Tensor mean_pool(const Tensor& t, std::size_t axis) {
  const auto v = axis_view(t.shape(), axis, "mean_pool");
  Tensor out(drop_axis(t.shape(), axis));
  const double inv = 1.0 / static_cast<double>(v.extent);
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t e = 0; e < v.extent; ++e)
      for (std::size_t i = 0; i < v.inner; ++i) out[o * v.inner + i] += t[(o * v.extent + e) * v.inner + i];
  for (auto& x : out.data()) x *= inv;
  return out;
}

std::vector<std::size_t> max_pool_argmax(const Tensor& t, std::size_t axis) {
  const auto v = axis_view(t.shape(), axis, "max_pool");
  std::vector<std::size_t> arg(v.outer * v.inner, 0);
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t i = 0; i < v.inner; ++i) {
      std::size_t best = 0;
      double best_v = t[o * v.extent * v.inner + i];
      for (std::size_t e = 1; e < v.extent; ++e) {
        const double x = t[(o * v.extent + e) * v.inner + i];
        if (x > best_v) {
          best_v = x;
          best = e;
        }
      }
      arg[o * v.inner + i] = best;
    }
  return arg;
}

Tensor max_pool(const Tensor& t, std::size_t axis) {
  const auto v = axis_view(t.shape(), axis, "max_pool");
  const auto arg = max_pool_argmax(t, axis);
  Tensor out(drop_axis(t.shape(), axis));
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t i = 0; i < v.inner; ++i)
      out[o * v.inner + i] = t[(o * v.extent + arg[o * v.inner + i]) * v.inner + i];
  return out;
}

Tensor repeat_blocks(const Tensor& t, std::size_t factor) {
  if (factor == 0) throw std::invalid_argument("repeat_blocks: factor must be >= 1");
  if (t.rank() == 0 || t.dim(0) == 0) throw ShapeError("repeat_blocks: empty leading axis");
  Shape shape = t.shape();
  const std::size_t rows = shape[0];
  const std::size_t row_size = t.size() / rows;
  shape[0] = rows * factor;
  Tensor out(shape);
  for (std::size_t j = 0; j < rows * factor; ++j) {
    const auto src = t.data().subspan((j / factor) * row_size, row_size);
    std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(j * row_size));
  }
  return out;
}

Tensor concat(const Tensor& a, const Tensor& b, std::size_t axis) {
  if (a.rank() != b.rank() || axis >= a.rank()) {
    throw ShapeError("concat: incompatible " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  for (std::size_t i = 0; i < a.rank(); ++i) {
    if (i != axis && a.dim(i) != b.dim(i)) {
      throw ShapeError("concat: incompatible " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    }
  }
  const auto va = axis_view(a.shape(), axis, "concat");
  const auto vb = axis_view(b.shape(), axis, "concat");
  Shape shape = a.shape();
  shape[axis] += b.dim(axis);
  Tensor out(shape);
  const std::size_t ca = va.extent * va.inner, cb = vb.extent * vb.inner;
  for (std::size_t o = 0; o < va.outer; ++o) {
    auto dst = out.data().begin() + static_cast<std::ptrdiff_t>(o * (ca + cb));
    const auto sa = a.data().subspan(o * ca, ca);
    const auto sb = b.data().subspan(o * cb, cb);
    std::copy(sa.begin(), sa.end(), dst);
    std::copy(sb.begin(), sb.end(), dst + static_cast<std::ptrdiff_t>(ca));
  }
  return out;
}

}  // namespace slicefusion
