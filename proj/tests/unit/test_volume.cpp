#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "slicefusion/dataset.hpp"
#include "slicefusion/io.hpp"
#include "slicefusion/rng.hpp"
#include "slicefusion/synthetic.hpp"
#include "slicefusion/volume.hpp"

using namespace slicefusion;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("slicefusion_unit_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Volume random_volume(Rng& rng, std::size_t n, std::size_t h, std::size_t w) {
  Volume v(n, h, w);
  for (double& x : v.voxels()) x = rng.uniform(-1500, 1500);
  return v;
}

}  // namespace

TEST_SUITE("volume") {

TEST_CASE("hu_window examples") {
  Volume raw(1, 1, 3);
  raw.at(0, 0, 0) = 1500;
  raw.at(0, 0, 1) = -2000;
  raw.at(0, 0, 2) = 0;
  const Volume w = hu_window(raw);
  CHECK(w.windowed());
  CHECK(w.at(0, 0, 0) == 1.0);
  CHECK(w.at(0, 0, 1) == 0.0);
  CHECK(w.at(0, 0, 2) == 0.5);
  CHECK_THROWS_AS(hu_window(w), VolumeError);
}

TEST_CASE("windowed volumes reject out-of-range voxels") {
  CHECK_THROWS_AS(Volume(1, 1, 2, std::vector<double>{0.5, 1.5}, true), VolumeError);
  CHECK_THROWS_AS(Volume(0, 1, 1), VolumeError);
}

TEST_CASE("resize examples") {
  Rng rng(1);
  const Volume v = random_volume(rng, 3, 4, 5);
  CHECK(resize(v, 3, 4, 5) == v);

  const Volume c = resize(Volume(2, 3, 4, -7.25), 5, 2, 9);
  CHECK(c.depth() == 5);
  CHECK(c.height() == 2);
  CHECK(c.width() == 9);
  for (double x : c.voxels()) CHECK(x == -7.25);

  Volume ramp(2, 1, 1);
  ramp.at(1, 0, 0) = 1.0;
  const Volume r = resize(ramp, 3, 1, 1);
  CHECK(r.at(0, 0, 0) == 0.0);
  CHECK(r.at(1, 0, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(r.at(2, 0, 0) == 1.0);
  CHECK_THROWS_AS(resize(v, 0, 1, 1), VolumeError);
}

TEST_CASE("resize stays within the input range") {
  Rng rng(2);
  for (int trial = 0; trial < 30; ++trial) {
    const Volume v = random_volume(rng, 1 + rng.below(5), 1 + rng.below(5), 1 + rng.below(5));
    const Volume r = resize(v, 1 + rng.below(7), 1 + rng.below(7), 1 + rng.below(7));
    const auto [lo, hi] = std::minmax_element(v.voxels().begin(), v.voxels().end());
    for (double x : r.voxels()) {
      CHECK(x >= *lo - 1e-9);
      CHECK(x <= *hi + 1e-9);
    }
  }
}

TEST_CASE("mvol round trip and malformed files") {
  const fs::path dir = scratch("mvol");
  Rng rng(3);
  Volume v = random_volume(rng, 2, 3, 4);
  for (double& x : v.voxels()) x = static_cast<float>(x);
  write_mvol(v, dir / "a.mvol");
  CHECK(read_mvol(dir / "a.mvol") == v);

  write_file_atomic(dir / "bad.mvol", "XXXX1\n1 1 1\n0000");
  CHECK_THROWS_AS(read_mvol(dir / "bad.mvol"), VolumeError);

  write_file_atomic(dir / "short.mvol", "MVOL1\n2 2 2\n" + std::string(7 * 4, '\0'));
  CHECK_THROWS_AS(read_mvol(dir / "short.mvol"), VolumeError);

  write_file_atomic(dir / "huge.mvol", "MVOL1\n99999999999 99999999999 99999999999\n");
  CHECK_THROWS_AS(read_mvol(dir / "huge.mvol"), VolumeError);
  CHECK_THROWS_AS(read_mvol(dir / "missing.mvol"), VolumeError);
}

TEST_CASE("synthetic generation is deterministic") {
  const SyntheticConfig cfg;
  for (std::size_t i = 0; i < 8; ++i) {
    const auto a = generate_sample(11, i, cfg);
    const auto b = generate_sample(11, i, cfg);
    CHECK(a.volume == b.volume);
    CHECK(a.sample.instruction == b.sample.instruction);
    CHECK(a.sample.answer == b.sample.answer);
    CHECK(a.sample.ground_truth_slices == b.sample.ground_truth_slices);
  }
  CHECK_FALSE(generate_sample(11, 0, cfg).volume == generate_sample(12, 0, cfg).volume);
}

TEST_CASE("synthetic samples carry consistent ground truth") {
  const SyntheticConfig cfg;
  bool saw_three = false;
  for (std::size_t i = 0; i < 120; ++i) {
    const auto plan = plan_sample(5, i, cfg);
    const auto& s = plan.sample;
    for (std::size_t j : s.ground_truth_slices) CHECK(j < cfg.depth);
    switch (s.task) {
      case TaskKind::locate: {
        REQUIRE(plan.layout.blobs.size() == 1);
        const auto slice = static_cast<std::size_t>(plan.layout.blobs[0].slice);
        CHECK(std::find(s.ground_truth_slices.begin(), s.ground_truth_slices.end(), slice) !=
              s.ground_truth_slices.end());
        CHECK(answer_value(s) == slice / cfg.band_size());
        break;
      }
      case TaskKind::count:
        CHECK(answer_value(s) + 1 == plan.layout.blobs.size());
        if (plan.layout.blobs.size() == 3) {
          saw_three = true;
          CHECK(s.answer == (s.format == FormatKind::free_form ? "three" : "c"));
        }
        break;
      case TaskKind::texture:
        REQUIRE(plan.layout.texture_slice);
        CHECK(answer_value(s) == (plan.layout.checkerboard ? 0u : 1u));
        break;
      case TaskKind::report: CHECK(s.format == FormatKind::free_form); break;
    }
  }
  CHECK(saw_three);
}

TEST_CASE("rephrase keeps the semantic answer") {
  for (std::size_t i = 0; i < 60; ++i) {
    const auto s = plan_sample(9, i, SyntheticConfig{}).sample;
    if (s.task == TaskKind::report) {
      CHECK_THROWS(rephrase(s, FormatKind::choice));
      continue;
    }
    for (FormatKind f : {FormatKind::choice, FormatKind::free_form}) {
      const TaskSample r = rephrase(s, f);
      CHECK(r.format == f);
      CHECK(answer_value(r) == answer_value(s));
      CHECK(r.ground_truth_slices == s.ground_truth_slices);
      CHECK(r.instruction == instruction_text(s.task, f));
    }
  }
}

TEST_CASE("locate blobs are detectable above the background") {
  const SyntheticConfig cfg;
  std::size_t checked = 0;
  for (std::size_t i = 0; checked < 20; ++i) {
    const auto g = generate_sample(21, i, cfg);
    if (g.sample.task != TaskKind::locate) continue;
    const auto& b = g.layout.blobs[0];
    const auto j = static_cast<std::size_t>(b.slice);
    double peak = -1e9, sum = 0;
    std::size_t n = 0;
    for (std::size_t y = 0; y < cfg.height; ++y) {
      for (std::size_t x = 0; x < cfg.width; ++x) {
        const double v = g.volume.at(j, y, x);
        const double dy = static_cast<double>(y) + 0.5 - b.y, dx = static_cast<double>(x) + 0.5 - b.x;
        if (dy * dy + dx * dx < 1.0) peak = std::max(peak, v);
        if (dy * dy + dx * dx > 16.0 * cfg.blob_sigma_xy * cfg.blob_sigma_xy) sum += v, ++n;
      }
    }
    REQUIRE(n > 0);
    CHECK(peak - sum / static_cast<double>(n) >= 5.0 * cfg.noise_hu);
    ++checked;
  }
}

TEST_CASE("invalid synthetic configs are rejected") {
  SyntheticConfig cfg;
  cfg.bands = 4;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = SyntheticConfig{};
  cfg.blob_peak_hu = 100;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = SyntheticConfig{};
  cfg.weight_locate = cfg.weight_count = cfg.weight_texture = cfg.weight_report = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("generated dataset round trips through the manifest") {
  const fs::path dir = scratch("gen");
  const auto samples = gen_synthetic(7, 12, SyntheticConfig{}, dir);
  const auto back = read_manifest(dir / "manifest.jsonl");
  REQUIRE(back.size() == samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    CHECK(back[i].instruction == samples[i].instruction);
    CHECK(back[i].answer == samples[i].answer);
    CHECK(back[i].task == samples[i].task);
    CHECK(back[i].format == samples[i].format);
    CHECK(back[i].ground_truth_slices == samples[i].ground_truth_slices);
  }
  const std::string first = read_file(dir / "manifest.jsonl");
  gen_synthetic(7, 12, SyntheticConfig{}, dir);
  CHECK(read_file(dir / "manifest.jsonl") == first);

  const Dataset from_disk = Dataset::from_manifest(dir / "manifest.jsonl");
  const Dataset regenerated = Dataset::synthetic(7, 12, SyntheticConfig{});
  CHECK(from_disk.vocab() == Vocabulary::standard());
  for (std::size_t i = 0; i < 12; ++i) {
    CHECK(from_disk.instruction(i) == regenerated.instruction(i));
    CHECK(from_disk.target(i) == regenerated.target(i));
    CHECK(from_disk.target(i).back() == from_disk.vocab().end_token());
    const Volume a = from_disk.volume(i), b = regenerated.volume(i);
    double err = 0;
    for (std::size_t k = 0; k < a.size(); ++k) err = std::max(err, std::abs(a.voxels()[k] - b.voxels()[k]));
    CHECK(err < 1e-6);
  }
}

TEST_CASE("vocabulary covers every phrasing") {
  const Vocabulary v = Vocabulary::standard();
  CHECK(v.size() <= 64);
  CHECK(v.id("<end>") == 0);
  const fs::path dir = scratch("vocab");
  v.save(dir / "vocab.txt");
  CHECK(Vocabulary::load(dir / "vocab.txt") == v);
  for (std::size_t i = 0; i < 200; ++i) {
    const auto s = plan_sample(3, i, SyntheticConfig{}).sample;
    CHECK(v.decode(v.encode(s.instruction)) == s.instruction);
    CHECK(v.decode(v.encode(s.answer)) == s.answer);
  }
  CHECK_THROWS(v.encode("unknown word"));
}

}
