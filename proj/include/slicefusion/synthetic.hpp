#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "slicefusion/metrics.hpp"
#include "slicefusion/volume.hpp"

namespace slicefusion {

enum class TaskKind { locate, count, texture, report };
enum class FormatKind { choice, free_form };

inline constexpr TaskKind kQuestionTasks[] = {TaskKind::locate, TaskKind::count, TaskKind::texture};

const char* task_name(TaskKind k);
const char* format_name(FormatKind f);
TaskKind parse_task(std::string_view name);
FormatKind parse_format(std::string_view name);

/// Fixed word-level vocabulary. Token ids are line numbers of the vocabulary file.
class Vocabulary {
 public:
  /// The built-in task vocabulary.
  static Vocabulary standard();
  static Vocabulary load(const std::filesystem::path& path);
  explicit Vocabulary(std::vector<std::string> words);

  void save(const std::filesystem::path& path) const;
  std::size_t size() const { return words_.size(); }
  std::size_t id(std::string_view word) const;
  const std::string& word(std::size_t id) const { return words_.at(id); }
  TokenSeq encode(std::string_view text) const;
  std::string decode(std::span<const std::size_t> ids) const;
  std::size_t end_token() const { return id("<end>"); }
  const std::vector<std::string>& words() const { return words_; }

  friend bool operator==(const Vocabulary&, const Vocabulary&) = default;

 private:
  std::vector<std::string> words_;
  std::map<std::string, std::size_t, std::less<>> ids_;
};

/// One question/answer record over a volume.
struct TaskSample {
  std::string volume_path;
  std::string instruction;
  std::string answer;
  TaskKind task = TaskKind::locate;
  FormatKind format = FormatKind::free_form;
  std::vector<std::size_t> ground_truth_slices;
};

/// Geometry and intensities (HU) of the generated scans.
///
/// Scans are a soft-tissue field carrying an in-plane anatomy pattern
/// a cos(kx) cos(t) + a cos(ky) sin(t), with t = 2 pi (j + 0.5) / depth turning once
/// over the volume, so the depth of a slice is readable from its content. Gaussian
/// noise and the planted findings are added on top.
struct SyntheticConfig {
  std::size_t depth = 32;
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t bands = 8;
  double noise_hu = 40.0;
  double tissue_hu = 0.0;
  double tissue_jitter_hu = 5.0;
  double anatomy_hu = 100.0;
  std::size_t anatomy_period = 16;  // voxels
  double blob_peak_hu = 1000.0;
  double blob_sigma_xy = 8.0;
  double blob_sigma_z = 1.0;
  double texture_hu = 200.0;
  std::size_t texture_size = 16;
  /// Relative frequency of each task family.
  double weight_locate = 1.0;
  double weight_count = 1.0;
  double weight_texture = 1.0;
  double weight_report = 1.0;

  void validate() const;
  std::size_t band_size() const { return depth / bands; }
};

/// Planted content of one scan, before rendering.
struct ScanLayout {
  struct Blob {
    double slice, y, x;
  };
  std::vector<Blob> blobs;
  std::optional<std::size_t> texture_slice;
  bool checkerboard = false;
  std::size_t texture_y = 0, texture_x = 0;
  bool texture_horizontal = false;
  bool texture_phase = false;
  double tissue_offset = 0.0;
};

struct GeneratedSample {
  TaskSample sample;
  Volume volume;  // raw HU
  ScanLayout layout;
};

/// Instruction text for a task in a given format; independent of the answer.
std::string instruction_text(TaskKind task, FormatKind format);
/// Answer text for a task whose semantic answer is `value`
/// (band index, count - 1, or pattern index 0=checkerboard/1=stripes).
std::string answer_text(TaskKind task, FormatKind format, std::size_t value);
/// The semantic answer value carried by a sample's answer text.
std::size_t answer_value(const TaskSample& s);
/// Re-phrases a sample in `format` with identical semantic content.
TaskSample rephrase(const TaskSample& s, FormatKind format);

/// A sample's record and layout, without the rendered volume.
struct SamplePlan {
  TaskSample sample;
  ScanLayout layout;
  std::uint64_t noise_seed = 0;
};

SamplePlan plan_sample(std::uint64_t seed, std::size_t index, const SyntheticConfig& cfg);

/// Deterministic sample `index` of the stream for `seed`.
GeneratedSample generate_sample(std::uint64_t seed, std::size_t index, const SyntheticConfig& cfg);

/// Renders a volume from a layout with noise drawn from `noise_seed`.
Volume render_scan(const ScanLayout& layout, const SyntheticConfig& cfg, std::uint64_t noise_seed);

/// Generates `n` samples; when `out_dir` is given, writes MVOL volumes, the manifest
/// (manifest.jsonl) and the vocabulary (vocab.txt) there.
std::vector<TaskSample> gen_synthetic(std::uint64_t seed, std::size_t n, const SyntheticConfig& cfg,
                                      const std::optional<std::filesystem::path>& out_dir = std::nullopt);

void write_manifest(const std::vector<TaskSample>& samples, const std::filesystem::path& path);
std::vector<TaskSample> read_manifest(const std::filesystem::path& path);

}  // namespace slicefusion
