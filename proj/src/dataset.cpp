#include "slicefusion/dataset.hpp"

#include <memory>
#include <numeric>
#include <stdexcept>

namespace slicefusion {

Dataset::Dataset(std::vector<TaskSample> samples, Vocabulary vocab, Loader loader)
    : Dataset(std::move(samples), std::move(vocab), {}, std::move(loader)) {}

Dataset::Dataset(std::vector<TaskSample> samples, Vocabulary vocab, std::vector<std::size_t> origin, Loader loader)
    : samples_(std::move(samples)), vocab_(std::move(vocab)), origin_(std::move(origin)), loader_(std::move(loader)) {
  if (origin_.empty()) {
    origin_.resize(samples_.size());
    std::iota(origin_.begin(), origin_.end(), std::size_t{0});
  }
  for (const auto& s : samples_) {
    instructions_.push_back(vocab_.encode(s.instruction));
    TokenSeq t = vocab_.encode(s.answer);
    t.push_back(vocab_.end_token());
    targets_.push_back(std::move(t));
  }
}

Dataset Dataset::from_manifest(const std::filesystem::path& manifest) {
  const auto dir = manifest.parent_path();
  auto samples = read_manifest(manifest);
  auto paths = std::make_shared<std::vector<std::filesystem::path>>();
  for (const auto& s : samples) paths->push_back(dir / s.volume_path);
  Loader loader = [paths](std::size_t i) { return read_mvol(paths->at(i)); };
  return Dataset(std::move(samples), Vocabulary::load(dir / "vocab.txt"), std::move(loader));
}

Dataset Dataset::synthetic(std::uint64_t seed, std::size_t n, const SyntheticConfig& cfg, std::size_t first) {
  cfg.validate();
  std::vector<TaskSample> samples;
  for (std::size_t i = 0; i < n; ++i) samples.push_back(plan_sample(seed, first + i, cfg).sample);
  // Rounded to float32 so in-memory samples match their MVOL files exactly.
  Loader loader = [seed, cfg, first](std::size_t i) {
    Volume v = generate_sample(seed, first + i, cfg).volume;
    std::vector<double> vox(v.voxels().begin(), v.voxels().end());
    for (auto& x : vox) x = static_cast<float>(x);
    return Volume(v.depth(), v.height(), v.width(), std::move(vox), false);
  };
  return Dataset(std::move(samples), Vocabulary::standard(), std::move(loader));
}

Volume Dataset::volume(std::size_t i) const {
  if (i >= samples_.size()) throw std::out_of_range("dataset index out of range");
  const std::size_t o = origin_[i];
  Volume raw;
  if (cache_ && o < cache_->size() && !(*cache_)[o].voxels.empty()) {
    const Cached& c = (*cache_)[o];
    raw = Volume(c.depth, c.height, c.width, std::vector<double>(c.voxels.begin(), c.voxels.end()), false);
  } else {
    raw = loader_(o);
    if (cache_) {
      if (cache_->size() <= o) cache_->resize(o + 1);
      Cached& c = (*cache_)[o];
      c = {raw.depth(), raw.height(), raw.width(), {}};
      c.voxels.assign(raw.voxels().begin(), raw.voxels().end());
    }
  }
  return raw.windowed() ? raw : hu_window(raw);
}

void Dataset::enable_cache() {
  if (!cache_) cache_ = std::make_shared<std::vector<Cached>>();
}

Dataset Dataset::filter(const std::function<bool(const TaskSample&)>& keep) const {
  std::vector<TaskSample> samples;
  std::vector<std::size_t> origin;
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    if (!keep(samples_[i])) continue;
    samples.push_back(samples_[i]);
    origin.push_back(origin_[i]);
  }
  return Dataset(std::move(samples), vocab_, std::move(origin), loader_);
}

}  // namespace slicefusion
