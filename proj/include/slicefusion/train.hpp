#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "slicefusion/autograd.hpp"
#include "slicefusion/dataset.hpp"
#include "slicefusion/fusion.hpp"
#include "slicefusion/params.hpp"

namespace slicefusion {

enum class Stage { pretrain, finetune };

const char* stage_name(Stage s);
Stage parse_stage(std::string_view name);

/// Sets freeze flags: pretrain trains conn3d and conn2d only; finetune trains
/// everything except enc3d.
void apply_stage(ModelParams& params, Stage stage);

struct TrainConfig {
  Stage stage = Stage::finetune;
  Strategy strategy = Strategy::tgis;
  double lr = 1e-3;
  std::size_t epochs = 1;
  std::size_t batch_size = 4;
  /// Shuffling and baseline score streams.
  std::uint64_t seed = 0;
  /// Stop after this many optimizer steps, if set.
  std::optional<std::size_t> max_steps;

  void validate() const;
};

class TrainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Adam with bias correction; frozen groups are skipped.
class Adam {
 public:
  explicit Adam(const ModelParams& params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(ModelParams& params, const GradientSet& grads);
  std::size_t steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  GradientSet m_, v_;
};

/// Frozen 3D patch embeddings, one per dataset sample, computed on first use.
class EmbeddingCache {
 public:
  EmbeddingCache(const ModelParams& params, const Dataset& data);
  const Tensor& get(std::size_t i, const Volume& windowed);

 private:
  const ModelParams* params_;
  std::vector<std::optional<Tensor>> cache_;
};

struct TrainResult {
  /// Mean per-sample loss of each optimizer step.
  std::vector<double> loss_trace;
  std::size_t steps = 0;
};

/// Called after every optimizer step with (step index, batch loss).
using StepCallback = std::function<void(std::size_t, double)>;

/// Loss of one sample: the summed token NLL of the target given image and instruction.
Var sample_loss(const BoundParams& bp, const Volume& windowed, std::span<const std::size_t> instruction,
                std::span<const std::size_t> target, Strategy strategy, const PipelineOptions& options = {});

/// Trains `params` in place. The pretrain stage uses only the report samples of `data`.
TrainResult train_stage(const Dataset& data, ModelParams& params, const TrainConfig& tcfg,
                        const StepCallback& on_step = {});

void write_loss_csv(const std::vector<double>& trace, const std::filesystem::path& path);

struct GradcheckEntry {
  Group group;
  std::string tensor;
  std::size_t index;
  double analytic;
  double numeric;
  double rel_error;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = true;
};

struct GradcheckOptions {
  std::size_t entries = 240;
  double step = 1e-5;
  std::uint64_t seed = 0;
  Strategy strategy = Strategy::tgis;
  GradientFault fault{};
};

/// Compares analytic gradients of the sample loss with central differences on a
/// sample of entries drawn from every trainable group. Relative error is
/// |a - n| / max(|a|, |n|, 1e-5).
GradcheckReport gradcheck(const ModelParams& params, const Volume& volume, std::span<const std::size_t> instruction,
                          std::span<const std::size_t> target, double tolerance, const GradcheckOptions& options = {});

struct SampleEval {
  TaskKind task;
  FormatKind format;
  TokenSeq prediction;
  TokenSeq reference;
  double exact = 0.0;
  double bleu = 0.0;
  double rouge = 0.0;
  std::optional<Tensor> scores;
};

struct EvalRecord {
  TaskKind task;
  FormatKind format;
  std::string metric;
  double value;  // x100
  std::size_t n_samples;
};

struct EvalResult {
  std::vector<SampleEval> samples;
  std::vector<EvalRecord> records;
};

/// Greedy-decodes every sample. Choice samples report accuracy; free-form samples
/// report accuracy, bleu and rouge_l.
EvalResult evaluate(const ModelParams& params, const Dataset& data, Strategy strategy, std::uint64_t seed = 0);

/// Per-(task, format) means, x100. Every group reports accuracy; free-form groups
/// add bleu and rouge_l.
std::vector<EvalRecord> summarize(std::span<const SampleEval> samples);

/// Per-sample suite score: exact match for choice samples, BLEU for free-form ones.
double suite_score(const SampleEval& s);

void write_eval_report(const std::vector<EvalRecord>& records, const std::filesystem::path& path);

/// Stage configs of a full two-stage run.
struct Schedule {
  TrainConfig pretrain{Stage::pretrain, Strategy::tgis, 1e-3, 1, 4, 0, std::nullopt};
  TrainConfig finetune{Stage::finetune, Strategy::tgis, 1e-3, 2, 4, 0, std::nullopt};
};

/// Initializes from `seed`, then pretrains and finetunes with `strategy`.
ModelParams train_model(const ModelConfig& config, std::uint64_t seed, const Dataset& data, Strategy strategy,
                        const Schedule& schedule);

struct AblationRow {
  Strategy strategy;
  TaskKind task;
  std::string metric;
  double mean, min, max;
  std::vector<std::uint64_t> seeds;
};

struct AblationRun {
  Strategy strategy;
  std::uint64_t seed;
  EvalResult eval;
};

struct AblationResult {
  std::vector<AblationRow> rows;
  std::vector<AblationRun> runs;
};

/// Trains every strategy for every seed and evaluates on `test`. Rows report
/// choice accuracy for question tasks and free-form BLEU for report samples.
AblationResult run_ablation(const ModelConfig& config, const Dataset& train, const Dataset& test,
                            std::span<const Strategy> strategies, std::span<const std::uint64_t> seeds,
                            const Schedule& schedule);

void write_ablation_table(const std::vector<AblationRow>& rows, const std::filesystem::path& path);

}  // namespace slicefusion
