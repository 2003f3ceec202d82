#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace slicefusion {

using TokenSeq = std::vector<std::size_t>;

/// Sentence BLEU: geometric mean of clipped n-gram precisions for n = 1..max_n,
/// add-one smoothing on n >= 2, times the brevity penalty exp(1 - r/c) when c < r.
double bleu(std::span<const std::size_t> hypothesis, std::span<const std::size_t> reference, std::size_t max_n = 4);

/// ROUGE-L F1 from the longest common subsequence.
double rouge_l(std::span<const std::size_t> hypothesis, std::span<const std::size_t> reference);

std::size_t lcs_length(std::span<const std::size_t> a, std::span<const std::size_t> b);

/// Fraction of exact sequence matches, ignoring everything from `end_token` on.
double accuracy(std::span<const TokenSeq> predictions, std::span<const TokenSeq> answers, std::size_t end_token);

/// Drops the first `end_token` and everything after it.
TokenSeq strip_end(std::span<const std::size_t> tokens, std::size_t end_token);

}  // namespace slicefusion
