#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <vector>

#include "slicefusion/metrics.hpp"
#include "slicefusion/synthetic.hpp"
#include "slicefusion/volume.hpp"

namespace slicefusion {

/// Task samples with their tokenization and a way to obtain each windowed volume.
class Dataset {
 public:
  /// Returns the raw (unwindowed) volume for an origin index.
  using Loader = std::function<Volume(std::size_t)>;

  Dataset(std::vector<TaskSample> samples, Vocabulary vocab, Loader loader);

  /// Reads `manifest` and the vocab.txt beside it; volume paths resolve relative to the manifest.
  static Dataset from_manifest(const std::filesystem::path& manifest);
  /// Samples [first, first + n) of the synthetic stream for `seed`; volumes are regenerated on demand.
  static Dataset synthetic(std::uint64_t seed, std::size_t n, const SyntheticConfig& cfg, std::size_t first = 0);

  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }
  const TaskSample& sample(std::size_t i) const { return samples_.at(i); }
  const std::vector<TaskSample>& samples() const { return samples_; }
  const Vocabulary& vocab() const { return vocab_; }
  const TokenSeq& instruction(std::size_t i) const { return instructions_.at(i); }
  /// Answer tokens followed by the end token.
  const TokenSeq& target(std::size_t i) const { return targets_.at(i); }
  /// HU-windowed volume of sample i.
  Volume volume(std::size_t i) const;
  /// Keeps raw voxels in memory as float32 after first load (N*H*W*4 bytes per sample).
  void enable_cache();

  /// The samples accepted by `keep`, sharing the loader.
  Dataset filter(const std::function<bool(const TaskSample&)>& keep) const;

 private:
  Dataset(std::vector<TaskSample> samples, Vocabulary vocab, std::vector<std::size_t> origin, Loader loader);

  std::vector<TaskSample> samples_;
  Vocabulary vocab_;
  std::vector<std::size_t> origin_;
  Loader loader_;
  struct Cached {
    std::size_t depth = 0, height = 0, width = 0;
    std::vector<float> voxels;
  };
  std::shared_ptr<std::vector<Cached>> cache_;
  std::vector<TokenSeq> instructions_;
  std::vector<TokenSeq> targets_;
};

}  // namespace slicefusion
