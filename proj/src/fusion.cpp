#include "slicefusion/fusion.hpp"

#include <cmath>
#include <string>

#include "slicefusion/encoders.hpp"

namespace slicefusion {

const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::tgis: return "tgis";
    case Strategy::avg: return "avg";
    case Strategy::gaussian: return "gaussian";
    case Strategy::random: return "random";
    case Strategy::maxpool: return "maxpool";
    case Strategy::only_3d: return "3d_only";
    case Strategy::only_2d: return "2d_only";
  }
  return "?";
}

Strategy parse_strategy(std::string_view name) {
  for (auto s : kAllStrategies)
    if (name == strategy_name(s)) return s;
  throw std::invalid_argument("unknown strategy '" + std::string(name) + "'");
}

bool on_simplex(const Tensor& scores, double tol) {
  double total = 0.0;
  for (double x : scores.data()) {
    if (!(x >= 0.0)) return false;
    total += x;
  }
  return std::abs(total - 1.0) <= tol;
}

namespace {

void check_transform_input(const Shape& shape, const EncoderConfig& cfg) {
  cfg.validate();
  if (shape.size() != 2 || shape[0] != cfg.tokens_3d() || shape[1] != cfg.hidden) {
    throw ShapeError("transform_3d: length " + (shape.empty() ? std::string("?") : std::to_string(shape[0])) +
                     " does not factor as " + std::to_string(cfg.pooled_depth()) + "x" +
                     std::to_string(cfg.pooled_height()) + "x" + std::to_string(cfg.pooled_width()) + " tokens of width " +
                     std::to_string(cfg.hidden) + " (got " + shape_str(shape) + ")");
  }
}

}  // namespace

Tensor transform_3d(const Tensor& z3d, const EncoderConfig& cfg) {
  check_transform_input(z3d.shape(), cfg);
  const Tensor grid = z3d.reshaped({cfg.pooled_depth(), cfg.slice_tokens(), cfg.hidden});
  return repeat_blocks(grid, cfg.replication());
}

Var transform_3d(Graph& g, Var z3d, const EncoderConfig& cfg) {
  check_transform_input(g.value(z3d).shape(), cfg);
  Var grid = g.reshape(z3d, {cfg.pooled_depth(), cfg.slice_tokens(), cfg.hidden});
  return g.repeat_blocks(grid, cfg.replication());
}

Tensor slice_features(const Tensor& z3d_slice, const Tensor& z2d_slice) {
  if (z3d_slice.rank() != 2 || z2d_slice.rank() != 2 || z3d_slice.dim(1) != z2d_slice.dim(1)) {
    throw ShapeError("slice_features: " + shape_str(z3d_slice.shape()) + " and " + shape_str(z2d_slice.shape()));
  }
  return mean_pool(concat(z3d_slice, z2d_slice, 0), 0);
}

Var slice_features(Graph& g, Var z3d_slices, Var z2d_slices) {
  const auto& a = g.value(z3d_slices).shape();
  const auto& b = g.value(z2d_slices).shape();
  if (a.size() != 3 || b.size() != 3 || a[0] != b[0] || a[2] != b[2]) {
    throw ShapeError("slice_features: " + shape_str(a) + " and " + shape_str(b));
  }
  return g.mean_pool(g.concat(z3d_slices, z2d_slices, 1), 1);
}

Var tgis_scores(const BoundParams& bp, Var text_features, Var slice_feats) {
  Graph& g = bp.graph();
  const Tensor& feats = g.value(slice_feats);
  if (feats.rank() != 2 || feats.dim(0) == 0) throw ShapeError("tgis_scores: slice features " + shape_str(feats.shape()));
  const std::size_t text_dim = g.value(text_features).size();
  Var zt = g.reshape(text_features, {1, text_dim});
  Var h = g.tanh(g.add_row_bias(g.matmul(zt, bp(Group::scorer_mlp, "fc1_w")), bp(Group::scorer_mlp, "fc1_b")));
  Var query = g.add_row_bias(g.matmul(h, bp(Group::scorer_mlp, "fc2_w")), bp(Group::scorer_mlp, "fc2_b"));
  Var relevance = g.matmul_bt(query, slice_feats);
  return g.softmax(g.reshape(relevance, {feats.dim(0)}));
}

Tensor tgis_scores_from_query(const Tensor& query, const Tensor& slice_feats) {
  if (slice_feats.rank() != 2 || query.size() != slice_feats.dim(1)) {
    throw ShapeError("tgis_scores: query " + shape_str(query.shape()) + " vs features " + shape_str(slice_feats.shape()));
  }
  const Tensor relevance = matmul_bt(query.reshaped({1, query.size()}), slice_feats);
  return softmax(relevance.reshaped({slice_feats.dim(0)}));
}

Tensor baseline_scores(Strategy strategy, std::size_t n, Rng& rng) {
  if (n == 0) throw std::invalid_argument("baseline_scores: need at least one slice");
  switch (strategy) {
    case Strategy::avg:
      return Tensor({n}, 1.0 / static_cast<double>(n));
    case Strategy::gaussian: {
      Tensor draws({n});
      for (auto& x : draws.data()) x = rng.normal();
      return softmax(draws);
    }
    case Strategy::random: {
      Tensor draws({n});
      double total = 0.0;
      for (auto& x : draws.data()) total += (x = rng.uniform());
      if (total <= 0.0) return Tensor({n}, 1.0 / static_cast<double>(n));
      for (auto& x : draws.data()) x /= total;
      return draws;
    }
    default:
      throw std::invalid_argument(std::string("baseline_scores: '") + strategy_name(strategy) +
                                  "' does not define a score vector");
  }
}

Tensor aggregate_2d(const Tensor& scores, const Tensor& z2d_slices, AggregateMode mode) {
  if (z2d_slices.rank() != 3) throw ShapeError("aggregate_2d: expected [N x L2d x D], got " + shape_str(z2d_slices.shape()));
  if (mode == AggregateMode::maxpool) return max_pool(z2d_slices, 0);
  const std::size_t n = z2d_slices.dim(0);
  if (scores.size() != n) {
    throw ShapeError("aggregate_2d: " + std::to_string(scores.size()) + " scores for " + std::to_string(n) + " slices");
  }
  const std::size_t block = z2d_slices.size() / n;
  Tensor out({z2d_slices.dim(1), z2d_slices.dim(2)});
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t k = 0; k < block; ++k) out[k] += scores[j] * z2d_slices[j * block + k];
  return out;
}

Var aggregate_2d(Graph& g, std::optional<Var> scores, Var z2d_slices, AggregateMode mode) {
  const Tensor& z = g.value(z2d_slices);
  if (z.rank() != 3) throw ShapeError("aggregate_2d: expected [N x L2d x D], got " + shape_str(z.shape()));
  if (mode == AggregateMode::maxpool) return g.max_pool(z2d_slices, 0);
  if (!scores) throw std::invalid_argument("aggregate_2d: weighted mode needs scores");
  const std::size_t n = z.dim(0);
  if (g.value(*scores).size() != n) {
    throw ShapeError("aggregate_2d: " + std::to_string(g.value(*scores).size()) + " scores for " + std::to_string(n) +
                     " slices");
  }
  Var row = g.reshape(*scores, {1, n});
  Var flat = g.reshape(z2d_slices, {n, z.dim(1) * z.dim(2)});
  return g.reshape(g.matmul(row, flat), {z.dim(1), z.dim(2)});
}

Tensor fuse(const Tensor& z3d, const Tensor& z2d_agg) {
  if (z3d.rank() != 2 || z2d_agg.rank() != 2 || z3d.dim(1) != z2d_agg.dim(1)) {
    throw ShapeError("fuse: " + shape_str(z3d.shape()) + " and " + shape_str(z2d_agg.shape()));
  }
  return concat(z3d, z2d_agg, 0);
}

Var fuse(Graph& g, Var z3d, Var z2d_agg) {
  const auto& a = g.value(z3d).shape();
  const auto& b = g.value(z2d_agg).shape();
  if (a.size() != 2 || b.size() != 2 || a[1] != b[1]) throw ShapeError("fuse: " + shape_str(a) + " and " + shape_str(b));
  return g.concat(z3d, z2d_agg, 0);
}

PipelineVars pipeline(const BoundParams& bp, const Volume& v, std::span<const std::size_t> instruction,
                      Strategy strategy, const PipelineOptions& options) {
  if (!v.windowed()) {
    const Volume windowed = hu_window(v);
    return pipeline(bp, windowed, instruction, strategy, options);
  }
  const auto& cfg = bp.params().config().encoder;
  Graph& g = bp.graph();
  const std::size_t n = cfg.depth;

  auto z3d_branch = [&] {
    Var embedding = options.patch_embedding_3d ? g.constant_ref(*options.patch_embedding_3d) : embed_patches_3d(bp, v);
    return encode_3d_from_embedding(bp, embedding);
  };
  auto baseline = [&](Strategy s) {
    if ((s == Strategy::gaussian || s == Strategy::random) && !options.rng) {
      throw std::invalid_argument(std::string("pipeline: strategy '") + strategy_name(s) + "' needs a random stream");
    }
    Rng fallback(0);
    return g.constant(baseline_scores(s, n, options.rng ? *options.rng : fallback));
  };

  switch (strategy) {
    case Strategy::only_3d:
      return {z3d_branch(), std::nullopt};
    case Strategy::only_2d: {
      Var z2d = encode_2d_all(bp, v);
      Var scores = baseline(Strategy::avg);
      return {aggregate_2d(g, scores, z2d, AggregateMode::weighted), scores};
    }
    case Strategy::maxpool: {
      Var z3d = z3d_branch();
      Var z2d = encode_2d_all(bp, v);
      return {fuse(g, z3d, aggregate_2d(g, std::nullopt, z2d, AggregateMode::maxpool)), std::nullopt};
    }
    case Strategy::avg:
    case Strategy::gaussian:
    case Strategy::random: {
      Var z3d = z3d_branch();
      Var z2d = encode_2d_all(bp, v);
      Var scores = baseline(strategy);
      return {fuse(g, z3d, aggregate_2d(g, scores, z2d, AggregateMode::weighted)), scores};
    }
    case Strategy::tgis: {
      Var z3d = z3d_branch();
      Var z2d = encode_2d_all(bp, v);
      Var feats = slice_features(g, transform_3d(g, z3d, cfg), z2d);
      Var scores = tgis_scores(bp, encode_text(bp, instruction), feats);
      return {fuse(g, z3d, aggregate_2d(g, scores, z2d, AggregateMode::weighted)), scores};
    }
  }
  throw std::logic_error("unhandled strategy");
}

PipelineOutput pipeline(const ModelParams& params, const Volume& v, std::span<const std::size_t> instruction,
                        Strategy strategy, std::uint64_t seed) {
  Graph g;
  BoundParams bp(g, params, false);
  Rng rng(seed);
  PipelineOptions options;
  options.rng = &rng;
  const auto vars = pipeline(bp, v, instruction, strategy, options);
  PipelineOutput out{g.value(vars.image), std::nullopt};
  if (vars.scores) out.scores = g.value(*vars.scores);
  return out;
}

}  // namespace slicefusion
