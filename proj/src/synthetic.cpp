#include "slicefusion/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "slicefusion/io.hpp"
#include "slicefusion/rng.hpp"

namespace slicefusion {

using json = nlohmann::json;

namespace {

constexpr std::array<const char*, 8> kLetters = {"a", "b", "c", "d", "e", "f", "g", "h"};
constexpr std::array<const char*, 4> kCounts = {"one", "two", "three", "four"};
constexpr std::array<const char*, 2> kPatterns = {"checkerboard", "stripes"};
constexpr std::size_t kBands = 8;

std::string band_word(std::size_t b) { return "band" + std::to_string(b); }

std::vector<std::string> option_words(TaskKind task) {
  std::vector<std::string> out;
  switch (task) {
    case TaskKind::locate:
      for (std::size_t b = 0; b < kBands; ++b) out.push_back(band_word(b));
      break;
    case TaskKind::count:
      out.assign(kCounts.begin(), kCounts.end());
      break;
    case TaskKind::texture:
      out.assign(kPatterns.begin(), kPatterns.end());
      break;
    case TaskKind::report:
      break;
  }
  return out;
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  std::string w;
  while (in >> w) out.push_back(std::move(w));
  return out;
}

ScanLayout::Blob place_blob(Rng& rng, const SyntheticConfig& cfg, std::size_t slice) {
  const double margin = std::min(3.0 * cfg.blob_sigma_xy, static_cast<double>(std::min(cfg.height, cfg.width)) / 2.0);
  return {static_cast<double>(slice), rng.uniform(margin, static_cast<double>(cfg.height) - margin),
          rng.uniform(margin, static_cast<double>(cfg.width) - margin)};
}

std::vector<std::size_t> distinct_bands(Rng& rng, std::size_t k, std::size_t bands) {
  std::vector<std::size_t> all(bands);
  std::iota(all.begin(), all.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) std::swap(all[i], all[i + rng.below(bands - i)]);
  all.resize(k);
  std::sort(all.begin(), all.end());
  return all;
}

void place_texture(Rng& rng, const SyntheticConfig& cfg, ScanLayout& layout) {
  layout.texture_slice = rng.below(cfg.depth);
  layout.checkerboard = rng.below(2) == 0;
  layout.texture_horizontal = rng.below(2) == 0;
  layout.texture_phase = rng.below(2) == 0;
  layout.texture_y = rng.below(cfg.height - cfg.texture_size + 1);
  layout.texture_x = rng.below(cfg.width - cfg.texture_size + 1);
}

std::vector<std::size_t> place_count_blobs(Rng& rng, const SyntheticConfig& cfg, ScanLayout& layout, std::size_t k) {
  std::vector<std::size_t> slices;
  for (std::size_t b : distinct_bands(rng, k, cfg.bands)) {
    const std::size_t slice = b * cfg.band_size() + rng.below(cfg.band_size());
    layout.blobs.push_back(place_blob(rng, cfg, slice));
    slices.push_back(slice);
  }
  return slices;
}

}  // namespace

const char* task_name(TaskKind k) {
  switch (k) {
    case TaskKind::locate: return "locate";
    case TaskKind::count: return "count";
    case TaskKind::texture: return "texture";
    case TaskKind::report: return "report";
  }
  return "?";
}

const char* format_name(FormatKind f) { return f == FormatKind::choice ? "choice" : "free_form"; }

TaskKind parse_task(std::string_view name) {
  for (auto k : {TaskKind::locate, TaskKind::count, TaskKind::texture, TaskKind::report})
    if (name == task_name(k)) return k;
  throw std::invalid_argument("unknown task_kind '" + std::string(name) + "'");
}

FormatKind parse_format(std::string_view name) {
  if (name == "choice") return FormatKind::choice;
  if (name == "free_form") return FormatKind::free_form;
  throw std::invalid_argument("unknown format_kind '" + std::string(name) + "'");
}

// ---- vocabulary

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
  for (std::size_t i = 0; i < words_.size(); ++i) {
    const auto& w = words_[i];
    if (w.empty() || w.find_first_of(" \t\r\n") != std::string::npos)
      throw std::invalid_argument("vocabulary: invalid token on line " + std::to_string(i + 1));
    if (!ids_.emplace(w, i).second) throw std::invalid_argument("vocabulary: duplicate token '" + w + "'");
  }
  if (!ids_.contains("<end>")) throw std::invalid_argument("vocabulary: missing <end> token");
}

Vocabulary Vocabulary::standard() {
  std::vector<std::string> w = {"<end>", "which", "band",  "holds", "the",   "bright",    "lesion",
                                "how",   "many",  "lesions", "are", "there", "what",      "texture",
                                "is",    "on",    "patterned", "slice", "describe", "scan", "options"};
  for (std::size_t b = 0; b < kBands; ++b) w.push_back(band_word(b));
  w.insert(w.end(), kCounts.begin(), kCounts.end());
  w.insert(w.end(), kPatterns.begin(), kPatterns.end());
  w.insert(w.end(), kLetters.begin(), kLetters.end());
  return Vocabulary(std::move(w));
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::vector<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    words.push_back(line);
  }
  return Vocabulary(std::move(words));
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::string out;
  for (const auto& w : words_) out += w + "\n";
  write_file_atomic(path, out);
}

std::size_t Vocabulary::id(std::string_view word) const {
  const auto it = ids_.find(word);
  if (it == ids_.end()) throw std::invalid_argument("token '" + std::string(word) + "' not in vocabulary");
  return it->second;
}

TokenSeq Vocabulary::encode(std::string_view text) const {
  TokenSeq out;
  for (const auto& w : split_words(text)) out.push_back(id(w));
  return out;
}

std::string Vocabulary::decode(std::span<const std::size_t> ids) const {
  std::string out;
  for (auto i : ids) {
    if (i >= words_.size()) throw std::out_of_range("token id " + std::to_string(i) + " outside vocabulary");
    if (!out.empty()) out += ' ';
    out += words_[i];
  }
  return out;
}

// ---- phrasing

std::string instruction_text(TaskKind task, FormatKind format) {
  std::string q;
  switch (task) {
    case TaskKind::locate: q = "which band holds the bright lesion"; break;
    case TaskKind::count: q = "how many lesions are there"; break;
    case TaskKind::texture: q = "what texture is on the patterned slice"; break;
    case TaskKind::report:
      if (format == FormatKind::choice) throw std::invalid_argument("report samples have no choice phrasing");
      return "describe the scan";
  }
  if (format == FormatKind::choice) {
    q += " options";
    const auto opts = option_words(task);
    for (std::size_t i = 0; i < opts.size(); ++i) q += std::string(" ") + kLetters[i] + " " + opts[i];
  }
  return q;
}

std::string answer_text(TaskKind task, FormatKind format, std::size_t value) {
  if (task == TaskKind::report) {
    if (format == FormatKind::choice) throw std::invalid_argument("report samples have no choice phrasing");
    const std::size_t count = value % kCounts.size(), pattern = value / kCounts.size();
    if (pattern >= kPatterns.size()) throw std::out_of_range("report answer value out of range");
    return std::string(kCounts[count]) + (count == 0 ? " lesion " : " lesions ") + kPatterns[pattern];
  }
  const auto opts = option_words(task);
  if (value >= opts.size()) throw std::out_of_range("answer value out of range");
  return format == FormatKind::choice ? std::string(kLetters[value]) : opts[value];
}

std::size_t answer_value(const TaskSample& s) {
  if (s.task == TaskKind::report) {
    const auto words = split_words(s.answer);
    if (words.size() != 3) throw std::invalid_argument("malformed report answer '" + s.answer + "'");
    const auto c = std::find(kCounts.begin(), kCounts.end(), words[0]);
    const auto p = std::find(kPatterns.begin(), kPatterns.end(), words[2]);
    if (c == kCounts.end() || p == kPatterns.end())
      throw std::invalid_argument("malformed report answer '" + s.answer + "'");
    return static_cast<std::size_t>(c - kCounts.begin()) +
           kCounts.size() * static_cast<std::size_t>(p - kPatterns.begin());
  }
  const auto opts = option_words(s.task);
  for (std::size_t i = 0; i < opts.size(); ++i) {
    const std::string& expect = s.format == FormatKind::choice ? std::string(kLetters[i]) : opts[i];
    if (s.answer == expect) return i;
  }
  throw std::invalid_argument("answer '" + s.answer + "' is not valid for task " + task_name(s.task));
}

TaskSample rephrase(const TaskSample& s, FormatKind format) {
  TaskSample out = s;
  out.format = format;
  out.instruction = instruction_text(s.task, format);
  out.answer = answer_text(s.task, format, answer_value(s));
  return out;
}

// ---- generation

void SyntheticConfig::validate() const {
  if (depth == 0 || height == 0 || width == 0) throw std::invalid_argument("synthetic config: zero volume dimension");
  if (bands != kBands) throw std::invalid_argument("synthetic config: bands must be 8");
  if (depth % bands != 0) throw std::invalid_argument("synthetic config: depth must be a multiple of bands");
  if (texture_size < 2 || texture_size > std::min(height, width))
    throw std::invalid_argument("synthetic config: texture_size out of range");
  if (anatomy_period < 2 || !(anatomy_hu >= 0.0))
    throw std::invalid_argument("synthetic config: anatomy period must be >= 2 and amplitude >= 0");
  if (!(noise_hu > 0.0) || !(blob_sigma_xy > 0.0) || !(blob_sigma_z > 0.0))
    throw std::invalid_argument("synthetic config: noise and blob widths must be positive");
  if (blob_peak_hu - std::sqrt(2.0) * anatomy_hu < 5.0 * noise_hu)
    throw std::invalid_argument("synthetic config: blob peak below 5 noise sd over the tissue field");
  const double weights[] = {weight_locate, weight_count, weight_texture, weight_report};
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw std::invalid_argument("synthetic config: negative task weight");
    total += w;
  }
  if (!(total > 0.0)) throw std::invalid_argument("synthetic config: all task weights are zero");
}

Volume render_scan(const ScanLayout& layout, const SyntheticConfig& cfg, std::uint64_t noise_seed) {
  const std::size_t n = cfg.depth, h = cfg.height, w = cfg.width;
  std::vector<double> vox(n * h * w);
  for (std::size_t j = 0; j < n; ++j) {
    const double base = cfg.tissue_hu + layout.tissue_offset;
    const double theta = 2.0 * std::numbers::pi * (static_cast<double>(j) + 0.5) / static_cast<double>(n);
    const double cy = std::sin(theta) * cfg.anatomy_hu, cx = std::cos(theta) * cfg.anatomy_hu;
    const double k = 2.0 * std::numbers::pi / static_cast<double>(cfg.anatomy_period);
    for (std::size_t y = 0; y < h; ++y) {
      const double fy = cy * std::cos(k * (static_cast<double>(y) + 0.5));
      for (std::size_t x = 0; x < w; ++x)
        vox[(j * h + y) * w + x] = base + fy + cx * std::cos(k * (static_cast<double>(x) + 0.5));
    }
  }

  const double reach_xy = 4.0 * cfg.blob_sigma_xy, reach_z = 4.0 * cfg.blob_sigma_z;
  for (const auto& b : layout.blobs) {
    const auto lo = [](double c, double r) { return static_cast<std::size_t>(std::max(0.0, std::ceil(c - r))); };
    const auto hi = [](double c, double r, std::size_t n) {
      return static_cast<std::size_t>(std::clamp(std::floor(c + r) + 1.0, 0.0, static_cast<double>(n)));
    };
    for (std::size_t j = lo(b.slice, reach_z); j < hi(b.slice, reach_z, n); ++j) {
      const double dz = static_cast<double>(j) - b.slice;
      for (std::size_t y = lo(b.y - 0.5, reach_xy); y < hi(b.y - 0.5, reach_xy, h); ++y) {
        for (std::size_t x = lo(b.x - 0.5, reach_xy); x < hi(b.x - 0.5, reach_xy, w); ++x) {
          const double dy = static_cast<double>(y) + 0.5 - b.y, dx = static_cast<double>(x) + 0.5 - b.x;
          vox[(j * h + y) * w + x] +=
              cfg.blob_peak_hu * std::exp(-(dy * dy + dx * dx) / (2.0 * cfg.blob_sigma_xy * cfg.blob_sigma_xy) -
                                          dz * dz / (2.0 * cfg.blob_sigma_z * cfg.blob_sigma_z));
        }
      }
    }
  }

  if (layout.texture_slice) {
    const std::size_t j = *layout.texture_slice, s = cfg.texture_size;
    const std::size_t phase = layout.texture_phase ? 1 : 0;
    for (std::size_t y = layout.texture_y; y < layout.texture_y + s; ++y) {
      for (std::size_t x = layout.texture_x; x < layout.texture_x + s; ++x) {
        const std::size_t k = layout.checkerboard ? y + x : (layout.texture_horizontal ? y : x);
        vox[(j * h + y) * w + x] += (k + phase) % 2 ? cfg.texture_hu : -cfg.texture_hu;
      }
    }
  }

  Rng noise(noise_seed);
  for (auto& v : vox) v += cfg.noise_hu * noise.normal();
  return Volume(n, h, w, std::move(vox), false);
}

SamplePlan plan_sample(std::uint64_t seed, std::size_t index, const SyntheticConfig& cfg) {
  cfg.validate();
  Rng rng = Rng(seed).derive(index);

  const double weights[] = {cfg.weight_locate, cfg.weight_count, cfg.weight_texture, cfg.weight_report};
  const double total = weights[0] + weights[1] + weights[2] + weights[3];
  const double u = rng.uniform() * total;
  std::size_t kind = 0;
  for (double acc = weights[0]; kind < 3 && !(u < acc); acc += weights[++kind]) {
  }

  TaskSample s;
  s.task = static_cast<TaskKind>(kind);
  s.format = s.task == TaskKind::report || rng.below(2) == 1 ? FormatKind::free_form : FormatKind::choice;

  ScanLayout layout;
  layout.tissue_offset = rng.uniform(-1.0, 1.0) * cfg.tissue_jitter_hu;

  std::size_t value = 0;
  switch (s.task) {
    case TaskKind::locate: {
      value = rng.below(cfg.bands);
      const std::size_t slice = value * cfg.band_size() + rng.below(cfg.band_size());
      layout.blobs.push_back(place_blob(rng, cfg, slice));
      s.ground_truth_slices = {slice};
      break;
    }
    case TaskKind::count: {
      value = rng.below(kCounts.size());
      s.ground_truth_slices = place_count_blobs(rng, cfg, layout, value + 1);
      break;
    }
    case TaskKind::texture: {
      place_texture(rng, cfg, layout);
      value = layout.checkerboard ? 0 : 1;
      s.ground_truth_slices = {*layout.texture_slice};
      break;
    }
    case TaskKind::report: {
      const std::size_t count = rng.below(kCounts.size());
      s.ground_truth_slices = place_count_blobs(rng, cfg, layout, count + 1);
      place_texture(rng, cfg, layout);
      value = count + kCounts.size() * (layout.checkerboard ? 0 : 1);
      s.ground_truth_slices.push_back(*layout.texture_slice);
      std::sort(s.ground_truth_slices.begin(), s.ground_truth_slices.end());
      s.ground_truth_slices.erase(std::unique(s.ground_truth_slices.begin(), s.ground_truth_slices.end()),
                                  s.ground_truth_slices.end());
      break;
    }
  }
  s.instruction = instruction_text(s.task, s.format);
  s.answer = answer_text(s.task, s.format, value);
  char name[32];
  std::snprintf(name, sizeof name, "volumes/%06zu.mvol", index);
  s.volume_path = name;

  const std::uint64_t noise_seed = rng.next_u64();
  return {std::move(s), std::move(layout), noise_seed};
}

GeneratedSample generate_sample(std::uint64_t seed, std::size_t index, const SyntheticConfig& cfg) {
  SamplePlan p = plan_sample(seed, index, cfg);
  Volume vol = render_scan(p.layout, cfg, p.noise_seed);
  return {std::move(p.sample), std::move(vol), std::move(p.layout)};
}

std::vector<TaskSample> gen_synthetic(std::uint64_t seed, std::size_t n, const SyntheticConfig& cfg,
                                      const std::optional<std::filesystem::path>& out_dir) {
  if (n == 0) throw std::invalid_argument("n must be >= 1");
  cfg.validate();
  if (out_dir) std::filesystem::create_directories(*out_dir / "volumes");
  std::vector<TaskSample> samples;
  samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    GeneratedSample g = generate_sample(seed, i, cfg);
    if (out_dir) write_mvol(g.volume, *out_dir / g.sample.volume_path);
    samples.push_back(std::move(g.sample));
  }
  if (out_dir) {
    Vocabulary::standard().save(*out_dir / "vocab.txt");
    write_manifest(samples, *out_dir / "manifest.jsonl");
  }
  return samples;
}

// ---- manifest

void write_manifest(const std::vector<TaskSample>& samples, const std::filesystem::path& path) {
  std::string out;
  for (const auto& s : samples) {
    json rec{{"volume_path", s.volume_path},       {"instruction", s.instruction},
             {"answer", s.answer},                 {"task_kind", task_name(s.task)},
             {"format_kind", format_name(s.format)}, {"ground_truth_slices", s.ground_truth_slices}};
    out += rec.dump() + "\n";
  }
  write_file_atomic(path, out);
}

std::vector<TaskSample> read_manifest(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::vector<TaskSample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json rec = json::parse(line);
      TaskSample s;
      s.volume_path = rec.at("volume_path").get<std::string>();
      s.instruction = rec.at("instruction").get<std::string>();
      s.answer = rec.at("answer").get<std::string>();
      s.task = parse_task(rec.at("task_kind").get<std::string>());
      s.format = parse_format(rec.at("format_kind").get<std::string>());
      s.ground_truth_slices = rec.at("ground_truth_slices").get<std::vector<std::size_t>>();
      out.push_back(std::move(s));
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace slicefusion
