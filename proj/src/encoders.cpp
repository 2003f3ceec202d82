#include "slicefusion/encoders.hpp"

#include <algorithm>
#include <string>

namespace slicefusion {

namespace {

void check_volume(const Volume& v, const EncoderConfig& cfg) {
  cfg.validate();
  if (v.depth() != cfg.depth || v.height() != cfg.height || v.width() != cfg.width) {
    throw ShapeError("volume " + std::to_string(v.depth()) + "x" + std::to_string(v.height()) + "x" +
                     std::to_string(v.width()) + " does not match configured " + std::to_string(cfg.depth) + "x" +
                     std::to_string(cfg.height) + "x" + std::to_string(cfg.width));
  }
}

void copy_slice_patches(const Volume& v, std::size_t slice, std::size_t side, double* dst) {
  const std::size_t gh = v.height() / side, gw = v.width() / side;
  for (std::size_t py = 0; py < gh; ++py)
    for (std::size_t px = 0; px < gw; ++px)
      for (std::size_t y = 0; y < side; ++y) {
        for (std::size_t x = 0; x < side; ++x) *dst++ = v.at(slice, py * side + y, px * side + x);
      }
}

// Windowed voxels are centered on the window midpoint and rescaled before embedding.
constexpr double kInputCenter = 0.5;
constexpr double kInputGain = 10.0;

Tensor standardize(Tensor patches) {
  for (double& x : patches.data()) x = (x - kInputCenter) * kInputGain;
  return patches;
}

Var linear(const BoundParams& bp, Group g, const std::string& prefix, Var x) {
  Graph& gr = bp.graph();
  return gr.add_row_bias(gr.matmul(x, bp(g, prefix + "w")), bp(g, prefix + "b"));
}

// Two-layer tanh MLP that keeps the feature width.
Var connector(const BoundParams& bp, Group g, Var x) {
  Graph& gr = bp.graph();
  return linear(bp, g, "fc2_", gr.tanh(linear(bp, g, "fc1_", x)));
}

Var mix_tokens(const BoundParams& bp, Group g, Var x) {
  Graph& gr = bp.graph();
  const Tensor& tx = gr.value(x);
  const std::size_t width = tx.dim(tx.rank() - 1);
  Var mixed = gr.token_mix(bp(g, "mix_w"), x);
  Var flat = gr.reshape(mixed, {tx.size() / width, width});
  Var act = gr.tanh(gr.add_row_bias(flat, bp(g, "mix_b")));
  return gr.add(x, gr.reshape(act, tx.shape()));
}

}  // namespace

Tensor extract_patches_3d(const Volume& v, const EncoderConfig& cfg) {
  check_volume(v, cfg);
  const std::size_t pd = cfg.patch_depth, ph = cfg.patch_height, pw = cfg.patch_width;
  const std::size_t gd = cfg.grid_depth(), gh = cfg.grid_height(), gw = cfg.grid_width();
  Tensor out({gd * gh * gw, pd * ph * pw});
  double* dst = out.data().data();
  for (std::size_t a = 0; a < gd; ++a)
    for (std::size_t b = 0; b < gh; ++b)
      for (std::size_t c = 0; c < gw; ++c)
        for (std::size_t z = 0; z < pd; ++z)
          for (std::size_t y = 0; y < ph; ++y) {
            for (std::size_t x = 0; x < pw; ++x) *dst++ = v.at(a * pd + z, b * ph + y, c * pw + x);
          }
  return out;
}

Tensor extract_patches_2d(const Volume& v, std::size_t slice, const EncoderConfig& cfg) {
  check_volume(v, cfg);
  if (slice >= v.depth()) {
    throw std::out_of_range("slice index " + std::to_string(slice) + " >= depth " + std::to_string(v.depth()));
  }
  const std::size_t side = cfg.patch_side_2d();
  Tensor out({cfg.tokens_2d, side * side});
  copy_slice_patches(v, slice, side, out.data().data());
  return out;
}

Tensor extract_patches_2d_all(const Volume& v, const EncoderConfig& cfg) {
  check_volume(v, cfg);
  const std::size_t side = cfg.patch_side_2d();
  Tensor out({v.depth() * cfg.tokens_2d, side * side});
  for (std::size_t j = 0; j < v.depth(); ++j)
    copy_slice_patches(v, j, side, out.data().data() + j * cfg.tokens_2d * side * side);
  return out;
}

Var embed_patches_3d(const BoundParams& bp, const Volume& v) {
  const auto& cfg = bp.params().config().encoder;
  Graph& gr = bp.graph();
  Var tokens = linear(bp, Group::enc3d, "patch_", gr.constant(standardize(extract_patches_3d(v, cfg))));
  if (cfg.mixing) tokens = mix_tokens(bp, Group::enc3d, tokens);
  return tokens;
}

Var encode_3d_from_embedding(const BoundParams& bp, Var patch_embedding) {
  const auto& cfg = bp.params().config().encoder;
  Graph& gr = bp.graph();
  Var x = patch_embedding;
  if (cfg.pool > 1) x = gr.avg_pool_grid(x, cfg.grid_depth(), cfg.grid_height(), cfg.grid_width(), cfg.pool);
  return connector(bp, Group::conn3d, x);
}

Var encode_3d(const BoundParams& bp, const Volume& v) {
  return encode_3d_from_embedding(bp, embed_patches_3d(bp, v));
}

Var encode_2d(const BoundParams& bp, const Volume& v, std::size_t slice) {
  const auto& cfg = bp.params().config().encoder;
  Var tokens = linear(bp, Group::enc2d, "patch_", bp.graph().constant(standardize(extract_patches_2d(v, slice, cfg))));
  if (cfg.mixing) tokens = mix_tokens(bp, Group::enc2d, tokens);
  return connector(bp, Group::conn2d, tokens);
}

Var encode_2d_all(const BoundParams& bp, const Volume& v) {
  const auto& cfg = bp.params().config().encoder;
  Graph& gr = bp.graph();
  Var tokens = linear(bp, Group::enc2d, "patch_", gr.constant(standardize(extract_patches_2d_all(v, cfg))));
  if (cfg.mixing) {
    Var batched = gr.reshape(tokens, {v.depth(), cfg.tokens_2d, cfg.hidden});
    tokens = gr.reshape(mix_tokens(bp, Group::enc2d, batched), {v.depth() * cfg.tokens_2d, cfg.hidden});
  }
  return gr.reshape(connector(bp, Group::conn2d, tokens), {v.depth(), cfg.tokens_2d, cfg.hidden});
}

Var encode_text(const BoundParams& bp, std::span<const std::size_t> tokens) {
  if (tokens.empty()) throw std::invalid_argument("encode_text: empty instruction");
  Graph& gr = bp.graph();
  return gr.mean_pool(gr.gather_rows(bp(Group::text_enc, "embed"), tokens), 0);
}

Tensor encode_3d(const ModelParams& params, const Volume& v) {
  Graph g;
  BoundParams bp(g, params, false);
  return g.value(encode_3d(bp, v));
}

Tensor encode_2d(const ModelParams& params, const Volume& v, std::size_t slice) {
  Graph g;
  BoundParams bp(g, params, false);
  return g.value(encode_2d(bp, v, slice));
}

Tensor encode_text(const ModelParams& params, std::span<const std::size_t> tokens) {
  Graph g;
  BoundParams bp(g, params, false);
  return g.value(encode_text(bp, tokens));
}

}  // namespace slicefusion
