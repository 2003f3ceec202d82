#include "slicefusion/train.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <limits>
#include <numeric>
#include <sstream>

#include "slicefusion/decoder.hpp"
#include "slicefusion/encoders.hpp"
#include "slicefusion/io.hpp"
#include "slicefusion/rng.hpp"

namespace slicefusion {

using json = nlohmann::json;

namespace {

constexpr std::uint64_t kShuffleStream = 0x5348;
constexpr std::uint64_t kScoreStream = 0x5343;

Rng score_stream(std::uint64_t seed, std::size_t key) { return Rng(seed).derive(kScoreStream).derive(key); }

}  // namespace

const char* stage_name(Stage s) { return s == Stage::pretrain ? "pretrain" : "finetune"; }

Stage parse_stage(std::string_view name) {
  if (name == "pretrain") return Stage::pretrain;
  if (name == "finetune") return Stage::finetune;
  throw std::invalid_argument("unknown stage '" + std::string(name) + "'");
}

void apply_stage(ModelParams& params, Stage stage) {
  for (Group g : kAllGroups) {
    bool trainable;
    if (stage == Stage::pretrain)
      trainable = g == Group::conn3d || g == Group::conn2d;
    else
      trainable = g != Group::enc3d;
    params.set_frozen(g, !trainable);
  }
}

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw std::invalid_argument("learning rate must be finite and >= 0");
  if (epochs == 0) throw std::invalid_argument("epochs must be >= 1");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
  if (max_steps && *max_steps == 0) throw std::invalid_argument("max_steps must be >= 1");
}

// ---- optimizer

Adam::Adam(const ModelParams& params, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(params), v_(params) {}

void Adam::step(ModelParams& params, const GradientSet& grads) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (Group g : kAllGroups) {
    auto& group = params.group(g);
    if (group.frozen) continue;
    for (std::size_t t = 0; t < group.tensors.size(); ++t) {
      auto p = group.tensors[t].value.data();
      auto gr = grads.at(g, t).data();
      auto m = m_.at(g, t).data();
      auto v = v_.at(g, t).data();
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * gr[i];
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * gr[i] * gr[i];
        p[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      }
    }
  }
}

// ---- training

EmbeddingCache::EmbeddingCache(const ModelParams& params, const Dataset& data)
    : params_(&params), cache_(data.size()) {}

const Tensor& EmbeddingCache::get(std::size_t i, const Volume& windowed) {
  auto& slot = cache_.at(i);
  if (!slot) {
    Graph g;
    BoundParams bp(g, *params_, false);
    slot = g.value(embed_patches_3d(bp, windowed));
  }
  return *slot;
}

Var sample_loss(const BoundParams& bp, const Volume& windowed, std::span<const std::size_t> instruction,
                std::span<const std::size_t> target, Strategy strategy, const PipelineOptions& options) {
  if (target.empty()) throw std::invalid_argument("sample_loss: empty target");
  Graph& g = bp.graph();
  const PipelineVars pv = pipeline(bp, windowed, instruction, strategy, options);
  const Var logits = decode_logits(bp, pv.image, instruction, target.first(target.size() - 1));
  return g.nll_loss(logits, target);
}

TrainResult train_stage(const Dataset& data, ModelParams& params, const TrainConfig& tcfg,
                        const StepCallback& on_step) {
  tcfg.validate();
  apply_stage(params, tcfg.stage);

  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < data.size(); ++i)
    if (tcfg.stage == Stage::finetune || data.sample(i).task == TaskKind::report) pool.push_back(i);
  if (pool.empty()) {
    throw TrainError(std::string("empty dataset: no samples for the ") + stage_name(tcfg.stage) + " stage");
  }
  if (std::any_of(pool.begin(), pool.end(), [&](std::size_t i) {
        const auto& t = data.target(i);
        return std::any_of(t.begin(), t.end(), [&](std::size_t id) { return id >= params.config().decoder.vocab; });
      })) {
    throw TrainError("dataset vocabulary exceeds the decoder vocabulary size");
  }

  EmbeddingCache cache(params, data);
  Adam adam(params, tcfg.lr);
  GradientSet grads(params);
  TrainResult result;

  for (std::size_t epoch = 0; epoch < tcfg.epochs; ++epoch) {
    std::vector<std::size_t> order = pool;
    Rng shuffle = Rng(tcfg.seed).derive(kShuffleStream).derive(epoch);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

    for (std::size_t start = 0; start < order.size(); start += tcfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + tcfg.batch_size);
      grads.zero();
      double loss_sum = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t i = order[k];
        const Volume v = data.volume(i);
        Rng rng = score_stream(tcfg.seed, epoch * order.size() + k);
        PipelineOptions options{&rng, &cache.get(i, v)};
        Graph g;
        BoundParams bp(g, params);
        const Var loss = sample_loss(bp, v, data.instruction(i), data.target(i), tcfg.strategy, options);
        const double value = g.value(loss)[0];
        if (!std::isfinite(value)) {
          std::ostringstream msg;
          msg << "non-finite loss " << value << " at step " << result.steps << " (epoch " << epoch << ", sample " << i
              << ", volume " << data.sample(i).volume_path << ")";
          throw TrainError(msg.str());
        }
        g.backward(loss);
        bp.accumulate(grads);
        loss_sum += value;
      }
      const double n = static_cast<double>(end - start);
      grads.scale(1.0 / n);
      adam.step(params, grads);
      result.loss_trace.push_back(loss_sum / n);
      if (on_step) on_step(result.steps, loss_sum / n);
      ++result.steps;
      if (tcfg.max_steps && result.steps >= *tcfg.max_steps) return result;
    }
  }
  return result;
}

void write_loss_csv(const std::vector<double>& trace, const std::filesystem::path& path) {
  std::ostringstream out;
  out.precision(17);
  out << "step,loss\n";
  for (std::size_t i = 0; i < trace.size(); ++i) out << i << ',' << trace[i] << '\n';
  write_file_atomic(path, out.str());
}

// ---- gradient check

// Gradients smaller than this are compared in absolute terms.
constexpr double kGradcheckFloor = 1e-5;

GradcheckReport gradcheck(const ModelParams& params, const Volume& volume, std::span<const std::size_t> instruction,
                          std::span<const std::size_t> target, double tolerance, const GradcheckOptions& options) {
  GradcheckReport report;
  report.tolerance = tolerance;

  std::vector<Group> groups;
  for (Group g : kAllGroups)
    if (!params.group(g).frozen && params.group(g).numel() > 0) groups.push_back(g);
  if (groups.empty() || options.entries == 0) return report;

  const Volume windowed = volume.windowed() ? volume : hu_window(volume);
  ModelParams p = params;
  std::optional<Tensor> embedding;
  if (p.group(Group::enc3d).frozen) {
    Graph g;
    BoundParams bp(g, p, false);
    embedding = g.value(embed_patches_3d(bp, windowed));
  }
  auto options_for = [&](Rng& rng) { return PipelineOptions{&rng, embedding ? &*embedding : nullptr}; };

  auto loss_at = [&] {
    Graph g;
    BoundParams bp(g, p, false);
    Rng rng(options.seed);
    return g.value(sample_loss(bp, windowed, instruction, target, options.strategy, options_for(rng)))[0];
  };

  GradientSet analytic(p);
  {
    Graph g(options.fault);
    BoundParams bp(g, p);
    Rng rng(options.seed);
    const Var loss = sample_loss(bp, windowed, instruction, target, options.strategy, options_for(rng));
    g.backward(loss);
    bp.accumulate(analytic);
  }

  Rng pick = Rng(options.seed).derive(0x4743);
  const std::size_t quota = (options.entries + groups.size() - 1) / groups.size();
  for (Group grp : groups) {
    auto& tensors = p.group(grp).tensors;
    std::vector<std::pair<std::size_t, std::size_t>> all, nonzero;
    for (std::size_t t = 0; t < tensors.size(); ++t) {
      for (std::size_t i = 0; i < tensors[t].value.size(); ++i) {
        all.emplace_back(t, i);
        if (analytic.at(grp, t)[i] != 0.0) nonzero.emplace_back(t, i);
      }
    }
    for (std::size_t k = 0; k < quota; ++k) {
      const auto& from = (k % 2 == 1 && !nonzero.empty()) ? nonzero : all;
      const auto [t, i] = from[pick.below(from.size())];
      double& x = tensors[t].value[i];
      const double saved = x;
      x = saved + options.step;
      const double up = loss_at();
      x = saved - options.step;
      const double down = loss_at();
      x = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic.at(grp, t)[i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), kGradcheckFloor});
      report.entries.push_back({grp, tensors[t].name, i, a, numeric, rel});
      report.max_rel_error = std::max(report.max_rel_error, rel);
    }
  }
  report.passed = report.max_rel_error <= tolerance;
  return report;
}

// ---- evaluation

double suite_score(const SampleEval& s) { return s.format == FormatKind::choice ? s.exact : s.bleu; }

EvalResult evaluate(const ModelParams& params, const Dataset& data, Strategy strategy, std::uint64_t seed) {
  const std::size_t end = data.vocab().end_token();
  if (data.vocab().size() > params.config().decoder.vocab) {
    throw std::invalid_argument("vocabulary mismatch: data has " + std::to_string(data.vocab().size()) +
                                " tokens, model supports " + std::to_string(params.config().decoder.vocab));
  }
  EvalResult result;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Volume v = data.volume(i);
    Rng rng = score_stream(seed, i);
    Graph g;
    BoundParams bp(g, params, false);
    const PipelineVars pv = pipeline(bp, v, data.instruction(i), strategy, PipelineOptions{&rng, nullptr});

    SampleEval s;
    s.task = data.sample(i).task;
    s.format = data.sample(i).format;
    s.prediction = strip_end(generate_greedy(params, g.value(pv.image), data.instruction(i), end), end);
    s.reference = strip_end(data.target(i), end);
    s.exact = s.prediction == s.reference ? 1.0 : 0.0;
    s.bleu = bleu(s.prediction, s.reference);
    s.rouge = rouge_l(s.prediction, s.reference);
    if (pv.scores) s.scores = g.value(*pv.scores);
    result.samples.push_back(std::move(s));
  }

  result.records = summarize(result.samples);
  return result;
}

std::vector<EvalRecord> summarize(std::span<const SampleEval> samples) {
  std::vector<EvalRecord> records;
  for (TaskKind task : {TaskKind::locate, TaskKind::count, TaskKind::texture, TaskKind::report}) {
    for (FormatKind format : {FormatKind::choice, FormatKind::free_form}) {
      double exact = 0, bl = 0, rg = 0;
      std::size_t n = 0;
      for (const auto& s : samples) {
        if (s.task != task || s.format != format) continue;
        exact += s.exact;
        bl += s.bleu;
        rg += s.rouge;
        ++n;
      }
      if (n == 0) continue;
      const double k = 100.0 / static_cast<double>(n);
      records.push_back({task, format, "accuracy", exact * k, n});
      if (format == FormatKind::free_form) {
        records.push_back({task, format, "bleu", bl * k, n});
        records.push_back({task, format, "rouge_l", rg * k, n});
      }
    }
  }
  return records;
}

void write_eval_report(const std::vector<EvalRecord>& records, const std::filesystem::path& path) {
  json out = json::array();
  for (const auto& r : records) {
    out.push_back({{"task_kind", task_name(r.task)},
                   {"format_kind", format_name(r.format)},
                   {"metric", r.metric},
                   {"value", r.value},
                   {"n_samples", r.n_samples}});
  }
  write_file_atomic(path, out.dump(2) + "\n");
}

// ---- full runs and ablation

ModelParams train_model(const ModelConfig& config, std::uint64_t seed, const Dataset& data, Strategy strategy,
                        const Schedule& schedule) {
  ModelParams params = init_params(seed, config);
  for (TrainConfig tcfg : {schedule.pretrain, schedule.finetune}) {
    tcfg.strategy = strategy;
    tcfg.seed = seed;
    train_stage(data, params, tcfg);
  }
  return params;
}

AblationResult run_ablation(const ModelConfig& config, const Dataset& train, const Dataset& test,
                            std::span<const Strategy> strategies, std::span<const std::uint64_t> seeds,
                            const Schedule& schedule) {
  if (seeds.empty()) throw std::invalid_argument("run_ablation: no seeds");
  AblationResult result;
  for (Strategy strategy : strategies) {
    for (std::uint64_t seed : seeds) {
      const ModelParams params = train_model(config, seed, train, strategy, schedule);
      result.runs.push_back({strategy, seed, evaluate(params, test, strategy, seed)});
    }
  }

  for (Strategy strategy : strategies) {
    for (TaskKind task : {TaskKind::locate, TaskKind::count, TaskKind::texture, TaskKind::report}) {
      const bool report = task == TaskKind::report;
      std::vector<double> values;
      for (const auto& run : result.runs) {
        if (run.strategy != strategy) continue;
        double total = 0;
        std::size_t n = 0;
        for (const auto& s : run.eval.samples) {
          if (s.task != task || s.format != (report ? FormatKind::free_form : FormatKind::choice)) continue;
          total += report ? s.bleu : s.exact;
          ++n;
        }
        values.push_back(n ? 100.0 * total / static_cast<double>(n) : 0.0);
      }
      const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
      const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
      result.rows.push_back({strategy, task, report ? "bleu" : "accuracy", mean, *lo, *hi,
                             std::vector<std::uint64_t>(seeds.begin(), seeds.end())});
    }
  }
  return result;
}

void write_ablation_table(const std::vector<AblationRow>& rows, const std::filesystem::path& path) {
  json out = json::array();
  for (const auto& r : rows) {
    out.push_back({{"strategy", strategy_name(r.strategy)},
                   {"task_kind", task_name(r.task)},
                   {"metric", r.metric},
                   {"mean", r.mean},
                   {"min", r.min},
                   {"max", r.max},
                   {"seeds", r.seeds}});
  }
  write_file_atomic(path, out.dump(2) + "\n");
}

}  // namespace slicefusion
