// slicefusion command-line tool: gen-data, train, eval, score, gradcheck.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "slicefusion/attention_export.hpp"
#include "slicefusion/dataset.hpp"
#include "slicefusion/io.hpp"
#include "slicefusion/run_config.hpp"
#include "slicefusion/synthetic.hpp"
#include "slicefusion/train.hpp"

namespace fs = std::filesystem;
using namespace slicefusion;

namespace {

enum Exit { kOk = 0, kUsage = 1, kRuntime = 2, kVerify = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

RunConfig load_config(const std::string& path) {
  if (path.empty()) return RunConfig{};
  if (!fs::is_regular_file(path)) throw UsageError("config file not found: " + path);
  try {
    return load_run_config(path);
  } catch (const ConfigError& e) {
    throw UsageError(path + ": " + e.what());
  }
}

fs::path manifest_path(const fs::path& data) {
  if (data.empty()) throw UsageError("no dataset given (set data_dir in the config or pass --data)");
  const fs::path m = fs::is_directory(data) ? data / "manifest.jsonl" : data;
  if (!fs::is_regular_file(m)) throw std::runtime_error("manifest not found: " + m.string());
  return m;
}

// The vocabulary a checkpoint was trained with, if it was saved beside it.
std::optional<Vocabulary> checkpoint_vocab(const fs::path& ckpt) {
  const fs::path p = ckpt.parent_path() / "vocab.txt";
  if (!fs::is_regular_file(p)) return std::nullopt;
  return Vocabulary::load(p);
}

void check_vocab(const fs::path& ckpt, const Vocabulary& data_vocab) {
  if (const auto v = checkpoint_vocab(ckpt); v && !(*v == data_vocab)) {
    throw std::runtime_error("vocabulary mismatch: checkpoint " + ckpt.string() + " was trained with a " +
                             std::to_string(v->size()) + "-token vocabulary that differs from the dataset's " +
                             std::to_string(data_vocab.size()) + "-token vocabulary");
  }
}

ModelParams load_model(const fs::path& ckpt, const RunConfig& cfg, bool require_match) {
  if (!fs::is_regular_file(ckpt)) throw std::runtime_error("checkpoint not found: " + ckpt.string());
  ModelParams p = load_checkpoint(ckpt);
  if (require_match && !(p.config() == cfg.model))
    throw std::runtime_error("checkpoint " + ckpt.string() + " was built for a different model config");
  return p;
}

int gen_data(std::uint64_t seed, std::size_t n, const fs::path& out) {
  if (n == 0) throw UsageError("n must be >= 1");
  fs::create_directories(out);
  const auto samples = gen_synthetic(seed, n, SyntheticConfig{}, out);
  std::map<std::string, std::size_t> counts;
  for (const auto& s : samples) ++counts[task_name(s.task)];
  std::cout << "wrote " << samples.size() << " samples to " << out.string() << "\n";
  for (const auto& [task, c] : counts) std::cout << "  " << task << ": " << c << "\n";
  return kOk;
}

int train(RunConfig cfg, const std::string& stage, const std::string& strategy, fs::path out) {
  try {
    if (!stage.empty()) cfg.train.stage = parse_stage(stage);
    if (!strategy.empty()) cfg.train.strategy = parse_strategy(strategy);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (out.empty()) out = cfg.output_dir;
  if (out.empty()) throw UsageError("no output directory (pass --out or set output_dir)");
  Dataset data = Dataset::from_manifest(manifest_path(cfg.data_dir));
  data.enable_cache();

  ModelParams params = init_params(cfg.train.seed, cfg.model);
  if (!cfg.checkpoint.empty()) {
    params = load_model(cfg.checkpoint, cfg, true);
    check_vocab(cfg.checkpoint, data.vocab());
  }
  const TrainResult r = train_stage(data, params, cfg.train);

  fs::create_directories(out);
  save_checkpoint(params, out / "model.ckpt");
  write_loss_csv(r.loss_trace, out / "loss.csv");
  data.vocab().save(out / "vocab.txt");
  std::cout << stage_name(cfg.train.stage) << " (" << strategy_name(cfg.train.strategy) << "): " << r.steps
            << " steps, final loss " << (r.loss_trace.empty() ? 0.0 : r.loss_trace.back()) << "\n"
            << "checkpoint " << (out / "model.ckpt").string() << "\n";
  return kOk;
}

int eval(const RunConfig& cfg, fs::path ckpt, fs::path data_path, fs::path report) {
  if (ckpt.empty()) ckpt = cfg.checkpoint;
  if (ckpt.empty()) throw UsageError("no checkpoint (pass --checkpoint or set checkpoint)");
  if (data_path.empty()) data_path = cfg.data_dir;
  if (report.empty()) {
    if (cfg.output_dir.empty()) throw UsageError("no report path (pass --report or set output_dir)");
    report = cfg.output_dir / "eval.json";
  }
  const Dataset data = Dataset::from_manifest(manifest_path(data_path));
  const ModelParams params = load_model(ckpt, cfg, false);
  check_vocab(ckpt, data.vocab());
  const EvalResult r = evaluate(params, data, cfg.train.strategy, cfg.train.seed);
  if (report.has_parent_path()) fs::create_directories(report.parent_path());
  write_eval_report(r.records, report);
  for (const auto& rec : r.records) {
    std::printf("%-8s %-9s %-8s %7.2f  n=%zu\n", task_name(rec.task), format_name(rec.format), rec.metric.c_str(),
                rec.value, rec.n_samples);
  }
  return kOk;
}

int score(const RunConfig& cfg, fs::path ckpt, const fs::path& volume, const std::string& instruction, fs::path out) {
  if (ckpt.empty()) ckpt = cfg.checkpoint;
  if (ckpt.empty()) throw UsageError("no checkpoint (pass --checkpoint or set checkpoint)");
  if (out.empty()) out = cfg.output_dir;
  if (out.empty()) throw UsageError("no output directory (pass --out or set output_dir)");
  const ModelParams params = load_model(ckpt, cfg, false);
  const Vocabulary vocab = checkpoint_vocab(ckpt).value_or(Vocabulary::standard());
  const TokenSeq tokens = vocab.encode(instruction);

  Volume v = read_mvol(volume);
  const auto& e = params.config().encoder;
  if (v.depth() != e.depth || v.height() != e.height || v.width() != e.width) v = resize(v, e.depth, e.height, e.width);
  const PipelineOutput p = pipeline(params, v, tokens, Strategy::tgis);

  fs::create_directories(out);
  write_attention_profile(*p.scores, out / "scores.csv", out / "scores.svg", instruction);
  std::size_t best = 0;
  for (std::size_t j = 1; j < p.scores->size(); ++j)
    if ((*p.scores)[j] > (*p.scores)[best]) best = j;
  std::cout << "wrote " << (out / "scores.csv").string() << " and " << (out / "scores.svg").string() << "\n"
            << "peak slice " << best << " score " << (*p.scores)[best] << "\n";
  return kOk;
}

int gradcheck_cmd(const RunConfig& cfg, std::uint64_t seed) {
  ModelParams params = init_params(seed, cfg.model);
  apply_stage(params, Stage::finetune);
  SyntheticConfig sc;
  sc.depth = cfg.model.encoder.depth;
  sc.height = cfg.model.encoder.height;
  sc.width = cfg.model.encoder.width;
  const Dataset data = Dataset::synthetic(seed, 1, sc);
  GradcheckOptions opts;
  opts.seed = seed;
  const GradcheckReport r = gradcheck(params, data.volume(0), data.instruction(0), data.target(0), 1e-4, opts);
  std::printf("max_rel_error %.6e\n", r.max_rel_error);
  std::printf("entries %zu tolerance %.1e %s\n", r.entries.size(), r.tolerance, r.passed ? "PASS" : "FAIL");
  return r.passed ? kOk : kVerify;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual 3D/2D volumetric feature fusion with text-guided slice scoring"};
  app.require_subcommand(1);

  std::string config;
  std::uint64_t seed = 0;
  std::size_t n = 0;
  std::string out, stage, strategy, checkpoint, data, report, volume, instruction;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  gen->add_option("--seed", seed, "Dataset seed")->required();
  gen->add_option("--n", n, "Number of samples")->required();
  gen->add_option("--out", out, "Output directory")->required();

  auto* tr = app.add_subcommand("train", "Run one training stage");
  tr->add_option("--config", config, "Run config file")->required();
  tr->add_option("--stage", stage, "pretrain or finetune (overrides the config)");
  tr->add_option("--strategy", strategy, "Slice attention strategy (overrides the config)");
  tr->add_option("--out", out, "Output directory (overrides output_dir)");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  ev->add_option("--config", config, "Run config file")->required();
  ev->add_option("--checkpoint", checkpoint, "Checkpoint (overrides the config)");
  ev->add_option("--data", data, "Dataset directory or manifest (overrides data_dir)");
  ev->add_option("--report", report, "Report path (JSON)");

  auto* sc = app.add_subcommand("score", "Export text-guided slice scores for one volume");
  sc->add_option("--config", config, "Run config file")->required();
  sc->add_option("--checkpoint", checkpoint, "Checkpoint (overrides the config)");
  sc->add_option("--volume", volume, "MVOL volume")->required();
  sc->add_option("--instruction", instruction, "Instruction text")->required();
  sc->add_option("--out", out, "Output directory for scores.csv and scores.svg");

  auto* gc = app.add_subcommand("gradcheck", "Compare analytic and numeric gradients");
  gc->add_option("--config", config, "Run config file (defaults when omitted)");
  gc->add_option("--seed", seed, "Model and sample seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) return gen_data(seed, n, out);
    const RunConfig cfg = load_config(config);
    if (*tr) return train(cfg, stage, strategy, out);
    if (*ev) return eval(cfg, checkpoint, data, report);
    if (*sc) return score(cfg, checkpoint, volume, instruction, out);
    if (*gc) return gradcheck_cmd(cfg, seed);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}
