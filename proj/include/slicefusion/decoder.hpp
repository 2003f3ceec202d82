#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "slicefusion/autograd.hpp"
#include "slicefusion/params.hpp"
#include "slicefusion/tensor.hpp"

namespace slicefusion {

/// Next-token logits for a prefix of [image tokens; instruction; answer_prefix].
///
/// A single causal attention block with a tanh feed-forward and residual
/// connections. Returns [answer_prefix.size() + 1 x vocab]: row i predicts answer
/// token i from the image, the instruction and answer tokens < i.
Var decode_logits(const BoundParams& bp, Var image_features, std::span<const std::size_t> instruction,
                  std::span<const std::size_t> answer_prefix);

Tensor decode_logits(const ModelParams& params, const Tensor& image_features, std::span<const std::size_t> instruction,
                     std::span<const std::size_t> answer_prefix);

/// Sum over positions of -log softmax(logits[i])[targets[i]].
double nll_loss(const Tensor& logits, std::span<const std::size_t> targets);

/// Appends the argmax token (lowest id on ties) until `end_token` or max_len tokens.
/// The end token is included in the output when produced.
std::vector<std::size_t> generate_greedy(const ModelParams& params, const Tensor& image_features,
                                         std::span<const std::size_t> instruction, std::size_t end_token);

}  // namespace slicefusion
