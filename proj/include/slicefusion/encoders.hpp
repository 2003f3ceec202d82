#pragma once

#include <cstddef>
#include <span>

#include "slicefusion/autograd.hpp"
#include "slicefusion/config.hpp"
#include "slicefusion/params.hpp"
#include "slicefusion/tensor.hpp"
#include "slicefusion/volume.hpp"

namespace slicefusion {

/// Flattened non-overlapping 3D patches, [pre_pool_tokens x patch_voxels_3d], in
/// row-major (depth, height, width) grid order.
Tensor extract_patches_3d(const Volume& v, const EncoderConfig& cfg);

/// Flattened square patches of one slice, [tokens_2d x side*side].
Tensor extract_patches_2d(const Volume& v, std::size_t slice, const EncoderConfig& cfg);

/// Patches of every slice stacked slice-major, [depth*tokens_2d x side*side].
Tensor extract_patches_2d_all(const Volume& v, const EncoderConfig& cfg);

/// 3D branch: patch embedding, optional token mixing, then the connector
/// (grid average pooling by `pool` and a two-layer tanh MLP). Returns [tokens_3d x D].
Var encode_3d(const BoundParams& bp, const Volume& v);
/// Same as encode_3d with the frozen patch embedding already computed.
Var encode_3d_from_embedding(const BoundParams& bp, Var patch_embedding);
/// Frozen 3D patch embedding (plus mixing), [pre_pool_tokens x D].
Var embed_patches_3d(const BoundParams& bp, const Volume& v);

/// 2D branch on one slice: [tokens_2d x D].
Var encode_2d(const BoundParams& bp, const Volume& v, std::size_t slice);
/// 2D branch on every slice: [depth x tokens_2d x D].
Var encode_2d_all(const BoundParams& bp, const Volume& v);

/// Bag-of-embeddings instruction encoder: [text_dim].
Var encode_text(const BoundParams& bp, std::span<const std::size_t> tokens);

// Evaluation-only conveniences that build and discard a graph.
Tensor encode_3d(const ModelParams& params, const Volume& v);
Tensor encode_2d(const ModelParams& params, const Volume& v, std::size_t slice);
Tensor encode_text(const ModelParams& params, std::span<const std::size_t> tokens);

}  // namespace slicefusion
