#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>

#include "slicefusion/autograd.hpp"
#include "slicefusion/config.hpp"
#include "slicefusion/params.hpp"
#include "slicefusion/rng.hpp"
#include "slicefusion/tensor.hpp"
#include "slicefusion/volume.hpp"

namespace slicefusion {

/// How per-slice 2D features are collapsed before fusion.
enum class Strategy { tgis, avg, gaussian, random, maxpool, only_3d, only_2d };

inline constexpr Strategy kAllStrategies[] = {Strategy::tgis,    Strategy::avg,     Strategy::gaussian, Strategy::random,
                                              Strategy::maxpool, Strategy::only_3d, Strategy::only_2d};

const char* strategy_name(Strategy s);
Strategy parse_strategy(std::string_view name);

enum class AggregateMode { weighted, maxpool };

/// True when every entry is >= 0 and the entries sum to 1 within `tol`.
bool on_simplex(const Tensor& scores, double tol = 1e-9);

/// Aligns serialized 3D features [tokens_3d x D] with the slice axis: reshape to the
/// pooled grid, repeat every depth layer `replication()` times contiguously, and
/// split into `depth` slices of [slice_tokens x D]. Result: [depth x L x D].
Tensor transform_3d(const Tensor& z3d, const EncoderConfig& cfg);
Var transform_3d(Graph& g, Var z3d, const EncoderConfig& cfg);

/// Mean over the concatenated 3D and 2D tokens of one slice: [L x D], [L2d x D] -> [D].
Tensor slice_features(const Tensor& z3d_slice, const Tensor& z2d_slice);
/// Batched form: [N x L x D], [N x L2d x D] -> [N x D].
Var slice_features(Graph& g, Var z3d_slices, Var z2d_slices);

/// Relevance of each slice to the instruction, normalised with softmax: [N].
Var tgis_scores(const BoundParams& bp, Var text_features, Var slice_feats);
/// Scores from an explicit query vector q: softmax(feats * q). Used to check the
/// scoring arithmetic independently of the query MLP.
Tensor tgis_scores_from_query(const Tensor& query, const Tensor& slice_feats);

/// Instruction-independent score vectors: avg, gaussian or random.
Tensor baseline_scores(Strategy strategy, std::size_t n, Rng& rng);

/// weighted: sum_j s_j z2d[j]; maxpool: elementwise max over slices (scores unused).
Tensor aggregate_2d(const Tensor& scores, const Tensor& z2d_slices, AggregateMode mode);
Var aggregate_2d(Graph& g, std::optional<Var> scores, Var z2d_slices, AggregateMode mode);

/// Token-axis concatenation, 3D tokens first.
Tensor fuse(const Tensor& z3d, const Tensor& z2d_agg);
Var fuse(Graph& g, Var z3d, Var z2d_agg);

struct PipelineVars {
  Var image;
  std::optional<Var> scores;
};

/// Options for pipeline runs that are not part of the model itself.
struct PipelineOptions {
  /// Stream for the gaussian and random baselines.
  Rng* rng = nullptr;
  /// Precomputed frozen 3D patch embedding for this volume, if available.
  const Tensor* patch_embedding_3d = nullptr;
};

/// Full feature path: encode, align, score, aggregate, fuse. Raw volumes are HU-windowed first.
PipelineVars pipeline(const BoundParams& bp, const Volume& v, std::span<const std::size_t> instruction,
                      Strategy strategy, const PipelineOptions& options = {});

struct PipelineOutput {
  Tensor image_features;
  std::optional<Tensor> scores;
};

PipelineOutput pipeline(const ModelParams& params, const Volume& v, std::span<const std::size_t> instruction,
                        Strategy strategy, std::uint64_t seed = 0);

}  // namespace slicefusion
