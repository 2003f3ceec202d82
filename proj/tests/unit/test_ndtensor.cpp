#include <cmath>

#include "doctest.h"
#include "fd.hpp"
#include "slicefusion/autograd.hpp"
#include "slicefusion/rng.hpp"
#include "slicefusion/tensor.hpp"

using namespace slicefusion;
using slicefusion::testing::max_fd_error;
using slicefusion::testing::random_tensor;

TEST_SUITE("ndtensor") {

TEST_CASE("tensor construction checks the element count") {
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
  const Tensor t({2, 3}, 1.5);
  CHECK(t.size() == shape_numel(t.shape()));
  CHECK_THROWS_AS(t.reshaped({4}), ShapeError);
}

TEST_CASE("matmul examples") {
  const Tensor id = Tensor::matrix({{1, 0}, {0, 1}});
  const Tensor m = Tensor::matrix({{3, 4}, {5, 6}});
  CHECK(matmul(id, m) == m);
  CHECK(matmul(Tensor::matrix({{1, 2}}), Tensor::matrix({{3}, {4}})) == Tensor::matrix({{11}}));
  Rng rng(1);
  CHECK(matmul(Tensor::zeros({2, 3}), random_tensor({3, 2}, rng)) == Tensor::zeros({2, 2}));
}

TEST_CASE("matmul shape mismatch names both shapes") {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    const auto first = msg.find("[2x3]");
    REQUIRE(first != std::string::npos);
    CHECK(msg.find("[2x3]", first + 1) != std::string::npos);
  }
}

TEST_CASE("softmax examples") {
  const Tensor u = softmax(Tensor::vector({0, 0, 0, 0}));
  for (double x : u.data()) CHECK(x == doctest::Approx(0.25).epsilon(1e-15));
  const Tensor s = softmax(Tensor::vector({std::log(2.0), 0}));
  CHECK(std::abs(s[0] - 2.0 / 3.0) < 1e-12);
  CHECK(std::abs(s[1] - 1.0 / 3.0) < 1e-12);
  const Tensor big = softmax(Tensor::vector({1000, 0}));
  CHECK(big.all_finite());
  CHECK(std::abs(big[0] - 1.0) < 1e-12);
  CHECK(big[1] < 1e-300);
  CHECK_THROWS_AS(softmax(Tensor({0})), ShapeError);
}

TEST_CASE("softmax lies on the simplex and is shift invariant") {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(30);
    Tensor v = random_tensor({n}, rng, -50, 50);
    const Tensor s = softmax(v);
    double sum = 0;
    for (double x : s.data()) {
      CHECK(x > 0.0);
      sum += x;
    }
    CHECK(std::abs(sum - 1.0) <= 1e-12);
    const double c = rng.uniform(-100, 100);
    for (double& x : v.data()) x += c;
    CHECK(max_abs_diff(softmax(v), s) <= 1e-12);
  }
}

TEST_CASE("mean_pool examples") {
  CHECK(mean_pool(Tensor::matrix({{1, 2}, {3, 4}, {5, 6}, {7, 8}})) == Tensor::vector({4, 5}));
  CHECK(mean_pool(Tensor::matrix({{9, 9}})) == Tensor::vector({9, 9}));
  CHECK(mean_pool(Tensor::matrix({{2.5, -1}, {2.5, -1}, {2.5, -1}})) == Tensor::vector({2.5, -1}));
  CHECK_THROWS_AS(mean_pool(Tensor({0, 3})), ShapeError);
}

TEST_CASE("max_pool examples") {
  CHECK(max_pool(Tensor::matrix({{1, 8}, {5, 2}})) == Tensor::vector({5, 8}));
  CHECK(max_pool(Tensor::matrix({{4, -4}})) == Tensor::vector({4, -4}));
  const Tensor ties = Tensor::matrix({{3, 3}, {3, 3}});
  CHECK(max_pool(ties) == Tensor::vector({3, 3}));
  CHECK(max_pool_argmax(ties) == std::vector<std::size_t>{0, 0});

  Graph g;
  const Var x = g.parameter(ties);
  g.backward(g.sum(g.max_pool(x)));
  CHECK(g.grad(x) == Tensor::matrix({{1, 1}, {0, 0}}));
  CHECK_THROWS_AS(max_pool(Tensor({0, 2})), ShapeError);
}

TEST_CASE("repeat_blocks examples") {
  const Tensor ab = Tensor::matrix({{1, 2}, {3, 4}});
  CHECK(repeat_blocks(ab, 3) == Tensor::matrix({{1, 2}, {1, 2}, {1, 2}, {3, 4}, {3, 4}, {3, 4}}));
  CHECK(repeat_blocks(ab, 1) == ab);
  CHECK(repeat_blocks(Tensor::matrix({{7}}), 4) == Tensor::matrix({{7}, {7}, {7}, {7}}));
  CHECK_THROWS_AS(repeat_blocks(ab, 0), std::invalid_argument);
}

TEST_CASE("repeat_blocks row j is input row j / f") {
  Rng rng(3);
  for (std::size_t f = 1; f <= 8; ++f) {
    const std::size_t m = 1 + rng.below(5), a = 1 + rng.below(3), b = 1 + rng.below(3);
    const Tensor t = random_tensor({m, a, b}, rng);
    const Tensor r = repeat_blocks(t, f);
    REQUIRE(r.shape() == Shape{m * f, a, b});
    for (std::size_t j = 0; j < m * f; ++j)
      for (std::size_t k = 0; k < a * b; ++k) CHECK(r[j * a * b + k] == t[(j / f) * a * b + k]);
  }
}

TEST_CASE("backward examples") {
  Rng rng(4);
  Graph g;
  const Tensor pt = random_tensor({2, 3}, rng);
  const Var p = g.parameter(pt);
  g.backward(g.sum(p));
  CHECK(g.grad(p) == Tensor::ones({2, 3}));

  Graph h;
  const Tensor pv = Tensor::vector({1, 2});
  const Var q = h.parameter(pv);
  const Var col = h.reshape(q, {2, 1});
  const Var row = h.reshape(q, {1, 2});
  h.backward(h.sum(h.matmul(row, col)));
  CHECK(h.grad(q) == Tensor::vector({2, 4}));

  Graph k;
  const Var v = k.parameter(pv);
  CHECK_THROWS_AS(k.backward(v), ShapeError);
}

TEST_CASE("every op matches central differences") {
  Rng rng(5);
  const auto r = [&](Shape s) { return random_tensor(std::move(s), rng); };
  struct Case {
    const char* name;
    testing::Forward f;
    std::vector<Tensor> inputs;
  };
  const std::vector<std::size_t> ids = {2, 0, 2, 3};
  const std::vector<std::size_t> targets = {1, 3, 0};
  const std::vector<Case> cases = {
      {"matmul", [](Graph& g, const std::vector<Var>& x) { return g.matmul(x[0], x[1]); }, {r({3, 4}), r({4, 2})}},
      {"matmul_bt", [](Graph& g, const std::vector<Var>& x) { return g.matmul_bt(x[0], x[1]); }, {r({3, 4}), r({2, 4})}},
      {"add", [](Graph& g, const std::vector<Var>& x) { return g.add(x[0], x[1]); }, {r({2, 3}), r({2, 3})}},
      {"add_row_bias", [](Graph& g, const std::vector<Var>& x) { return g.add_row_bias(x[0], x[1]); }, {r({3, 2}), r({2})}},
      {"scale", [](Graph& g, const std::vector<Var>& x) { return g.scale(x[0], -1.7); }, {r({5})}},
      {"tanh", [](Graph& g, const std::vector<Var>& x) { return g.tanh(x[0]); }, {r({2, 3})}},
      {"rms_norm", [](Graph& g, const std::vector<Var>& x) { return g.rms_norm(x[0]); }, {r({3, 4})}},
      {"softmax", [](Graph& g, const std::vector<Var>& x) { return g.softmax(x[0]); }, {r({6})}},
      {"causal_softmax", [](Graph& g, const std::vector<Var>& x) { return g.causal_softmax(x[0], 1); }, {r({3, 5})}},
      {"mean_pool", [](Graph& g, const std::vector<Var>& x) { return g.mean_pool(x[0], 1); }, {r({3, 4, 2})}},
      {"max_pool", [](Graph& g, const std::vector<Var>& x) { return g.max_pool(x[0]); }, {r({4, 3})}},
      {"repeat_blocks", [](Graph& g, const std::vector<Var>& x) { return g.repeat_blocks(x[0], 3); }, {r({2, 2})}},
      {"concat", [](Graph& g, const std::vector<Var>& x) { return g.concat(x[0], x[1], 0); }, {r({2, 3}), r({1, 3})}},
      {"reshape", [](Graph& g, const std::vector<Var>& x) { return g.reshape(x[0], {3, 2}); }, {r({2, 3})}},
      {"gather_rows", [&](Graph& g, const std::vector<Var>& x) { return g.gather_rows(x[0], ids); }, {r({4, 3})}},
      {"slice_rows", [](Graph& g, const std::vector<Var>& x) { return g.slice_rows(x[0], 1, 3); }, {r({4, 2})}},
      {"token_mix", [](Graph& g, const std::vector<Var>& x) { return g.token_mix(x[0], x[1]); }, {r({3, 3}), r({2, 3, 2})}},
      {"avg_pool_grid", [](Graph& g, const std::vector<Var>& x) { return g.avg_pool_grid(x[0], 2, 2, 4, 2); },
       {r({16, 3})}},
      {"sum", [](Graph& g, const std::vector<Var>& x) { return g.sum(x[0]); }, {r({2, 3})}},
      {"nll_loss", [&](Graph& g, const std::vector<Var>& x) { return g.nll_loss(x[0], targets); }, {r({3, 4})}},
  };
  for (const auto& c : cases) {
    CAPTURE(c.name);
    CHECK(max_fd_error(c.f, c.inputs) <= 1e-4);
  }
}

TEST_CASE("rng matches the splitmix64 reference stream") {
  Rng rng(0);
  CHECK(rng.next_u64() == 0xe220a8397b1dcdafULL);
  CHECK(rng.next_u64() == 0x6e789e6aa1b965f4ULL);
  CHECK(rng.next_u64() == 0x06c45d188009454fULL);
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

}
