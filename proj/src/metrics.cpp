#include "slicefusion/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace slicefusion {

namespace {

using Ngram = std::vector<std::size_t>;

std::map<Ngram, std::size_t> count_ngrams(std::span<const std::size_t> tokens, std::size_t n) {
  std::map<Ngram, std::size_t> counts;
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) ++counts[Ngram(tokens.begin() + i, tokens.begin() + i + n)];
  return counts;
}

}  // namespace

double bleu(std::span<const std::size_t> hypothesis, std::span<const std::size_t> reference, std::size_t max_n) {
  if (reference.empty()) throw std::invalid_argument("bleu: empty reference");
  if (max_n == 0) throw std::invalid_argument("bleu: max_n must be >= 1");
  if (hypothesis.empty()) return 0.0;

  double log_sum = 0.0;
  for (std::size_t n = 1; n <= max_n; ++n) {
    const auto hyp = count_ngrams(hypothesis, n);
    const auto ref = count_ngrams(reference, n);
    std::size_t matched = 0, total = 0;
    for (const auto& [gram, count] : hyp) {
      total += count;
      const auto it = ref.find(gram);
      if (it != ref.end()) matched += std::min(count, it->second);
    }
    double precision;
    if (n == 1) {
      if (matched == 0) return 0.0;
      precision = static_cast<double>(matched) / static_cast<double>(total);
    } else {
      precision = (static_cast<double>(matched) + 1.0) / (static_cast<double>(total) + 1.0);
    }
    log_sum += std::log(precision);
  }
  const double c = static_cast<double>(hypothesis.size());
  const double r = static_cast<double>(reference.size());
  const double brevity = c < r ? std::exp(1.0 - r / c) : 1.0;
  return brevity * std::exp(log_sum / static_cast<double>(max_n));
}

std::size_t lcs_length(std::span<const std::size_t> a, std::span<const std::size_t> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(std::span<const std::size_t> hypothesis, std::span<const std::size_t> reference) {
  if (reference.empty()) throw std::invalid_argument("rouge_l: empty reference");
  if (hypothesis.empty()) return 0.0;
  const double lcs = static_cast<double>(lcs_length(hypothesis, reference));
  const double p = lcs / static_cast<double>(hypothesis.size());
  const double r = lcs / static_cast<double>(reference.size());
  return (p + r) > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
}

TokenSeq strip_end(std::span<const std::size_t> tokens, std::size_t end_token) {
  const auto it = std::find(tokens.begin(), tokens.end(), end_token);
  return TokenSeq(tokens.begin(), it);
}

double accuracy(std::span<const TokenSeq> predictions, std::span<const TokenSeq> answers, std::size_t end_token) {
  if (predictions.size() != answers.size()) throw std::invalid_argument("accuracy: length mismatch");
  if (predictions.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i)
    if (strip_end(predictions[i], end_token) == strip_end(answers[i], end_token)) ++hits;
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

}  // namespace slicefusion
