#include "fd.hpp"

namespace slicefusion::testing {

Tensor random_tensor(Shape shape, Rng& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  for (double& x : t.data()) x = rng.uniform(lo, hi);
  return t;
}

namespace {

// Scalar probe: <f(x), w> via a [1 x n] * [n x 1] product.
Var probe(Graph& g, Var y, const Tensor& w) {
  const std::size_t n = g.value(y).size();
  return g.sum(g.matmul(g.reshape(y, {1, n}), g.constant(w.reshaped({n, 1}))));
}

}  // namespace

double max_fd_error(const Forward& f, std::vector<Tensor> inputs, std::uint64_t seed, double h) {
  Rng rng(seed);
  Tensor w;
  std::vector<Tensor> grads;
  {
    Graph g;
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(g.parameter(t));
    const Var y = f(g, vars);
    w = random_tensor(g.value(y).shape(), rng);
    const Var root = probe(g, y, w);
    g.backward(root);
    for (Var v : vars) grads.push_back(g.grad(v));
  }
  const auto value = [&] {
    Graph g;
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(g.constant(t));
    return g.value(probe(g, f(g, vars), w))[0];
  };
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double saved = inputs[k][i];
      inputs[k][i] = saved + h;
      const double up = value();
      inputs[k][i] = saved - h;
      const double down = value();
      inputs[k][i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = grads[k][i];
      worst = std::max(worst, std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-5}));
    }
  }
  return worst;
}

}  // namespace slicefusion::testing
