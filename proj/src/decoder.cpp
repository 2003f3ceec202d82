#include "slicefusion/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace slicefusion {

namespace {

Var linear(const BoundParams& bp, const std::string& prefix, Var x) {
  Graph& g = bp.graph();
  return g.add_row_bias(g.matmul(x, bp(Group::decoder, prefix + "w")), bp(Group::decoder, prefix + "b"));
}

}  // namespace

Var decode_logits(const BoundParams& bp, Var image_features, std::span<const std::size_t> instruction,
                  std::span<const std::size_t> answer_prefix) {
  Graph& g = bp.graph();
  const auto& cfg = bp.params().config().decoder;
  const Tensor& zi = g.value(image_features);
  if (zi.rank() != 2 || zi.dim(0) == 0) throw ShapeError("decode_logits: image features " + shape_str(zi.shape()));

  std::vector<std::size_t> ids(instruction.begin(), instruction.end());
  ids.insert(ids.end(), answer_prefix.begin(), answer_prefix.end());
  for (auto id : ids) {
    if (id >= cfg.vocab) {
      throw std::out_of_range("decode_logits: token id " + std::to_string(id) + " >= vocabulary size " +
                              std::to_string(cfg.vocab));
    }
  }

  Var x = linear(bp, "img_", image_features);
  if (!ids.empty()) x = g.concat(x, g.gather_rows(bp(Group::decoder, "embed"), ids), 0);
  const std::size_t total = g.value(x).dim(0);
  const std::size_t rows = answer_prefix.size() + 1;

  // Only the trailing rows produce logits, and with one block nothing else reads
  // the other rows' outputs, so queries are formed for those rows alone.
  Var xn = g.rms_norm(x);
  Var q = g.matmul(g.slice_rows(xn, total - rows, total), bp(Group::decoder, "wq"));
  Var k = g.matmul(xn, bp(Group::decoder, "wk"));
  Var v = g.matmul(xn, bp(Group::decoder, "wv"));
  Var att = g.causal_softmax(g.scale(g.matmul_bt(q, k), 1.0 / std::sqrt(static_cast<double>(cfg.width))), total - rows);
  Var h = g.add(g.slice_rows(x, total - rows, total), g.matmul(g.matmul(att, v), bp(Group::decoder, "wo")));
  Var f = g.add(h, linear(bp, "ff2_", g.tanh(linear(bp, "ff1_", g.rms_norm(h)))));
  return linear(bp, "out_", g.rms_norm(f));
}

Tensor decode_logits(const ModelParams& params, const Tensor& image_features, std::span<const std::size_t> instruction,
                     std::span<const std::size_t> answer_prefix) {
  Graph g;
  BoundParams bp(g, params, false);
  return g.value(decode_logits(bp, g.constant_ref(image_features), instruction, answer_prefix));
}

double nll_loss(const Tensor& logits, std::span<const std::size_t> targets) {
  Graph g;
  return g.value(g.nll_loss(g.constant_ref(logits), targets))[0];
}

std::vector<std::size_t> generate_greedy(const ModelParams& params, const Tensor& image_features,
                                         std::span<const std::size_t> instruction, std::size_t end_token) {
  const auto& cfg = params.config().decoder;
  std::vector<std::size_t> out;
  while (out.size() < cfg.max_len) {
    const Tensor logits = decode_logits(params, image_features, instruction, out);
    const std::size_t vocab = logits.dim(1);
    const double* last = logits.data().data() + (logits.dim(0) - 1) * vocab;
    const auto best = static_cast<std::size_t>(std::max_element(last, last + vocab) - last);
    out.push_back(best);
    if (best == end_token) break;
  }
  return out;
}

}  // namespace slicefusion
