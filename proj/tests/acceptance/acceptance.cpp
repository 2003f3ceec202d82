// Acceptance checks. One PASS/FAIL line per criterion.
//
//   acceptance [--only 1,2,...] [--out DIR]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "slicefusion/encoders.hpp"
#include "slicefusion/fusion.hpp"
#include "slicefusion/metrics.hpp"
#include "slicefusion/synthetic.hpp"
#include "slicefusion/train.hpp"
#include "slicefusion/volume.hpp"

namespace fs = std::filesystem;
using namespace slicefusion;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

Volume random_raw(Rng& rng, std::size_t n, std::size_t h, std::size_t w) {
  Volume v(n, h, w);
  for (auto& x : v.voxels()) x = rng.uniform(-1200.0, 1200.0);
  return v;
}

// ---- 1

Outcome shape_laws() {
  struct G {
    std::size_t n, h, w, pd, ph, pw, pool;
  };
  std::vector<G> grid;
  for (std::size_t n : {8, 16, 32})
    for (std::size_t hw : {32, 64})
      for (std::size_t pd : {2, 4})
        for (std::size_t p : {8, 16})
          for (std::size_t pool : {1, 2}) grid.push_back({n, hw, hw, pd, p, p, pool});
  grid.push_back({32, 64, 32, 4, 16, 8, 1});

  std::size_t checked = 0;
  Rng rng(11);
  for (const auto& g : grid) {
    ModelConfig mc;
    auto& e = mc.encoder;
    e.depth = g.n, e.height = g.h, e.width = g.w;
    e.patch_depth = g.pd, e.patch_height = g.ph, e.patch_width = g.pw, e.pool = g.pool;
    e.hidden = 8, e.text_dim = 8, e.tokens_2d = (g.h / 8) * (g.w / 8);
    try {
      mc.validate();
    } catch (const ConfigError&) {
      continue;
    }
    const std::size_t gh = g.h / (g.ph * g.pool), gw = g.w / (g.pw * g.pool);
    const std::size_t lv = (g.n / (g.pd * g.pool)) * gh * gw;
    const ModelParams params = init_params(checked, mc);
    const Tensor z3 = encode_3d(params, hu_window(random_raw(rng, g.n, g.h, g.w)));
    const Tensor sl = transform_3d(z3, e);
    if (z3.dim(0) != lv || sl.dim(0) != g.n || sl.dim(1) != gh * gw) {
      return {false, "mismatch at " + std::to_string(g.n) + "x" + std::to_string(g.h) + "x" + std::to_string(g.w)};
    }
    ++checked;
  }

  EncoderConfig full;
  full.height = full.width = 256;
  full.pool = 2;
  full.tokens_2d = 256;
  full.validate();
  ModelConfig mc;
  mc.encoder = full;
  const ModelParams params = init_params(0, mc);
  const Tensor z3 = encode_3d(params, hu_window(random_raw(rng, 32, 256, 256)));
  const Tensor sl = transform_3d(z3, full);
  const bool ok = checked >= 10 && full.pre_pool_tokens() == 2048 && z3.dim(0) == 256 && sl.dim(1) == 64;
  return {ok, std::to_string(checked) + " configs; full config L1=" + std::to_string(full.pre_pool_tokens()) +
                  " L_v=" + std::to_string(z3.dim(0)) + " L=" + std::to_string(sl.dim(1))};
}

// ---- 2

Outcome alignment_oracle() {
  Rng rng(22);
  std::size_t cases = 0;
  while (cases < 150) {
    EncoderConfig e;
    e.patch_depth = 1 + rng.below(4);
    e.pool = 1 + rng.below(2);
    e.patch_height = e.patch_width = 4 * (1 + rng.below(2));
    const std::size_t gd = 1 + rng.below(4), side = 1 + rng.below(3);
    e.depth = gd * e.patch_depth * e.pool;
    e.height = e.width = side * e.patch_height * e.pool;
    e.hidden = 1 + rng.below(5);
    e.tokens_2d = 1;
    const std::size_t d = e.hidden, r = e.patch_depth * e.pool;
    Tensor z({gd * side * side, d});
    for (auto& x : z.data()) x = rng.uniform(-1.0, 1.0);
    const Tensor out = transform_3d(z, e);

    Tensor oracle({e.depth, side * side, d});
    for (std::size_t j = 0; j < e.depth; ++j)
      for (std::size_t t = 0; t < side * side; ++t)
        for (std::size_t k = 0; k < d; ++k)
          oracle[(j * side * side + t) * d + k] = z[((j / r) * side * side + t) * d + k];
    if (!(out == oracle)) return {false, "mismatch at case " + std::to_string(cases)};
    ++cases;
  }
  return {true, std::to_string(cases) + " random cases bit-exact"};
}

// ---- 3

Outcome simplex_identities() {
  Rng rng(33);
  double worst_sum = 0.0;
  std::size_t checked = 0;
  for (std::size_t c = 0; c < 200; ++c) {
    const std::size_t n = 1 + rng.below(40), d = 1 + rng.below(8);
    Tensor q({d}), feats({n, d});
    for (auto& x : q.data()) x = rng.uniform(-3.0, 3.0);
    for (auto& x : feats.data()) x = rng.uniform(-3.0, 3.0);
    std::vector<Tensor> all = {tgis_scores_from_query(q, feats)};
    for (Strategy s : {Strategy::avg, Strategy::gaussian, Strategy::random}) all.push_back(baseline_scores(s, n, rng));
    for (const Tensor& s : all) {
      double sum = 0.0;
      for (double x : s.data()) {
        if (x < 0.0) return {false, "negative score"};
        sum += x;
      }
      worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
      ++checked;
    }
  }
  // Scores from the trained-path pipeline on a random model.
  const ModelParams params = init_params(3, ModelConfig{});
  const Volume v = random_raw(rng, 32, 64, 64);
  const TokenSeq instr = Vocabulary::standard().encode(instruction_text(TaskKind::locate, FormatKind::free_form));
  const auto out = pipeline(params, v, instr, Strategy::tgis);
  if (!on_simplex(*out.scores, 1e-9)) return {false, "pipeline scores off simplex"};

  bool onehot_exact = true;
  double uniform_err = 0.0;
  for (std::size_t c = 0; c < 50; ++c) {
    const std::size_t n = 1 + rng.below(12), l = 1 + rng.below(6), d = 1 + rng.below(6);
    Tensor z({n, l, d});
    for (auto& x : z.data()) x = rng.uniform(-5.0, 5.0);
    const std::size_t k = rng.below(n);
    Tensor onehot({n});
    onehot[k] = 1.0;
    const Tensor picked = aggregate_2d(onehot, z, AggregateMode::weighted);
    for (std::size_t i = 0; i < l * d; ++i) onehot_exact &= picked[i] == z[k * l * d + i];
    const Tensor mean = aggregate_2d(Tensor({n}, 1.0 / static_cast<double>(n)), z, AggregateMode::weighted);
    for (std::size_t i = 0; i < l * d; ++i) {
      double m = 0.0;
      for (std::size_t j = 0; j < n; ++j) m += z[j * l * d + i];
      uniform_err = std::max(uniform_err, std::abs(mean[i] - m / static_cast<double>(n)));
    }
  }
  const bool ok = worst_sum <= 1e-9 && onehot_exact && uniform_err <= 1e-12;
  return {ok, std::to_string(checked) + " score vectors, max |sum-1| " + fmt("%.1e", worst_sum) + ", one-hot " +
                  (onehot_exact ? "exact" : "inexact") + ", uniform err " + fmt("%.1e", uniform_err)};
}

// ---- 4

Outcome gradient_check() {
  double worst = 0.0;
  std::size_t min_entries = SIZE_MAX;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ModelParams params = init_params(seed, ModelConfig{});
    apply_stage(params, Stage::finetune);
    const Dataset data = Dataset::synthetic(seed, 1, SyntheticConfig{});
    GradcheckOptions opts;
    opts.seed = seed;
    const auto r = gradcheck(params, data.volume(0), data.instruction(0), data.target(0), 1e-4, opts);
    std::set<Group> seen;
    for (const auto& e : r.entries) seen.insert(e.group);
    for (Group g : kAllGroups)
      if (!params.group(g).frozen && !seen.count(g)) return {false, std::string("group not sampled: ") + group_name(g)};
    worst = std::max(worst, r.max_rel_error);
    min_entries = std::min(min_entries, r.entries.size());
  }
  return {worst <= 1e-4 && min_entries >= 200,
          "5 seeds, >= " + std::to_string(min_entries) + " entries each, max rel err " + fmt("%.2e", worst)};
}

// ---- 5

Outcome overfit() {
  const Dataset data = Dataset::synthetic(5, 1, SyntheticConfig{});
  ModelParams params = init_params(5, ModelConfig{});
  TrainConfig tc;
  tc.stage = Stage::finetune;
  tc.batch_size = 1;
  tc.epochs = 500;
  const auto r = train_stage(data, params, tc);
  const auto it = std::find_if(r.loss_trace.begin(), r.loss_trace.end(), [](double l) { return l < 0.05; });
  if (it == r.loss_trace.end()) return {false, "loss never below 0.05; final " + fmt("%.4f", r.loss_trace.back())};
  return {true, "loss " + fmt("%.4f", *it) + " at step " + std::to_string(it - r.loss_trace.begin())};
}

// ---- 6, 7, 8 share the desk-scale data.

constexpr std::uint64_t kDataSeed = 2024;
constexpr std::size_t kTrainSize = 2000;

const Dataset& train_set() {
  static Dataset d = [] {
    Dataset t = Dataset::synthetic(kDataSeed, kTrainSize, SyntheticConfig{});
    t.enable_cache();
    return t;
  }();
  return d;
}

// Held-out stream after the training samples.
Dataset held_out(std::size_t n, const std::function<bool(const TaskSample&)>& keep) {
  const Dataset pool = Dataset::synthetic(kDataSeed, 4 * n + 200, SyntheticConfig{}, kTrainSize);
  std::size_t taken = 0;
  return pool.filter([&](const TaskSample& s) { return keep(s) && taken++ < n; });
}

struct Trained {
  ModelParams params;
  double seconds;
};

const Trained& trained_tgis() {
  static Trained t = [] {
    const auto t0 = std::chrono::steady_clock::now();
    ModelParams p = train_model(ModelConfig{}, 0, train_set(), Strategy::tgis, Schedule{});
    return Trained{std::move(p), std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
  }();
  return t;
}

Tensor scores_for(const ModelParams& p, const Volume& v, TaskKind task, FormatKind format) {
  static const Vocabulary vocab = Vocabulary::standard();
  return *pipeline(p, v, vocab.encode(instruction_text(task, format)), Strategy::tgis).scores;
}

Outcome task_attention() {
  const Trained& t = trained_tgis();
  const Dataset locate = held_out(200, [](const TaskSample& s) { return s.task == TaskKind::locate; });
  const std::size_t band = SyntheticConfig{}.band_size();
  std::size_t focused = 0;
  double gap = 0.0, mass_sum = 0.0;
  for (std::size_t i = 0; i < locate.size(); ++i) {
    const Volume v = locate.volume(i);
    const auto& s = locate.sample(i);
    const Tensor loc = scores_for(t.params, v, TaskKind::locate, s.format);
    const Tensor cnt = scores_for(t.params, v, TaskKind::count, s.format);
    const std::size_t b = s.ground_truth_slices.front() / band;
    double mass = 0.0;
    for (std::size_t j = b * band; j < (b + 1) * band; ++j) mass += loc[j];
    mass_sum += mass;
    if (mass > 3.0 * static_cast<double>(band) / static_cast<double>(loc.size())) ++focused;
    gap += max_abs_diff(loc, cnt);
  }
  const double n = static_cast<double>(locate.size());
  const double frac = static_cast<double>(focused) / n;
  gap /= n;
  return {locate.size() == 200 && frac >= 0.9 && gap >= 0.05,
          fmt("%.1f%% of 200 locate samples focused (mean band mass %.3f), locate/count max-norm gap %.3f; train %.0f s",
              100.0 * frac, mass_sum / n, gap, t.seconds)};
}

Outcome format_invariance() {
  const Trained& t = trained_tgis();
  const Dataset qs = held_out(300, [](const TaskSample& s) { return s.task != TaskKind::report; });
  double total = 0.0;
  for (std::size_t i = 0; i < qs.size(); ++i) {
    const Volume v = qs.volume(i);
    const Tensor a = scores_for(t.params, v, qs.sample(i).task, FormatKind::choice);
    const Tensor b = scores_for(t.params, v, qs.sample(i).task, FormatKind::free_form);
    double dot = 0, na = 0, nb = 0;
    for (std::size_t j = 0; j < a.size(); ++j) dot += a[j] * b[j], na += a[j] * a[j], nb += b[j] * b[j];
    total += dot / std::sqrt(na * nb);
  }
  const double mean = total / static_cast<double>(qs.size());
  return {mean >= 0.9, fmt("mean cosine %.4f over %.0f paired questions", mean, static_cast<double>(qs.size()))};
}

Outcome ablation_ordering(const fs::path& out_dir) {
  const Dataset test = held_out(400, [](const TaskSample&) { return true; });
  const std::vector<std::uint64_t> seeds = {0, 1, 2};
  const auto result = run_ablation(ModelConfig{}, train_set(), test, kAllStrategies, seeds, Schedule{});
  fs::create_directories(out_dir);
  write_ablation_table(result.rows, out_dir / "ablation.json");

  std::map<Strategy, double> choice, suite;
  for (const auto& run : result.runs) {
    double c = 0, s = 0;
    std::size_t nc = 0;
    for (const auto& e : run.eval.samples) {
      s += suite_score(e);
      if (e.format == FormatKind::choice) c += e.exact, ++nc;
    }
    choice[run.strategy] += 100.0 * c / static_cast<double>(nc) / static_cast<double>(seeds.size());
    suite[run.strategy] += 100.0 * s / static_cast<double>(run.eval.samples.size()) / static_cast<double>(seeds.size());
  }
  bool ok = true;
  std::ostringstream d;
  d.precision(3);
  d << "choice acc:";
  for (Strategy s : kAllStrategies) d << ' ' << strategy_name(s) << '=' << choice[s];
  d << "; suite:";
  for (Strategy s : kAllStrategies) d << ' ' << strategy_name(s) << '=' << suite[s];
  for (Strategy s : {Strategy::avg, Strategy::gaussian, Strategy::random, Strategy::maxpool})
    ok &= choice[Strategy::tgis] >= choice[s] + 2.0;
  for (Strategy s : {Strategy::only_3d, Strategy::only_2d}) ok &= suite[Strategy::tgis] >= suite[s] + 2.0;
  return {ok, d.str()};
}

// ---- 9

std::size_t lcs_brute(std::span<const std::size_t> a, std::span<const std::size_t> b) {
  if (a.empty() || b.empty()) return 0;
  if (a[0] == b[0]) return 1 + lcs_brute(a.subspan(1), b.subspan(1));
  return std::max(lcs_brute(a.subspan(1), b), lcs_brute(a, b.subspan(1)));
}

Outcome metric_oracles() {
  const auto near = [](double a, double b) { return std::abs(a - b) <= 1e-9; };
  const TokenSeq s4 = {1, 2, 3, 4, 5};
  bool ok = near(bleu(s4, s4), 1.0) && near(bleu(TokenSeq{7, 7, 7}, TokenSeq{7}, 1), 1.0 / 3.0) &&
            near(bleu(TokenSeq{1, 2}, TokenSeq{3, 4}), 0.0) && near(rouge_l(s4, s4), 1.0) &&
            near(rouge_l(TokenSeq{1, 2, 3, 4}, TokenSeq{1, 3, 4}), 6.0 / 7.0) &&
            near(rouge_l(TokenSeq{1, 2}, TokenSeq{3, 4}), 0.0);
  if (!ok) return {false, "hand-computed example mismatch"};

  // Every sequence of length 0..5 over a 3-letter alphabet against every nonempty one.
  std::vector<TokenSeq> seqs = {{}};
  for (std::size_t len = 1; len <= 5; ++len) {
    const std::size_t count = seqs.size();
    for (std::size_t i = 0; i < count; ++i)
      if (seqs[i].size() == len - 1)
        for (std::size_t a = 0; a < 3; ++a) {
          TokenSeq s = seqs[i];
          s.push_back(a);
          seqs.push_back(s);
        }
  }
  std::size_t pairs = 0;
  for (const auto& h : seqs)
    for (const auto& r : seqs) {
      if (r.empty()) continue;
      const double lcs = static_cast<double>(lcs_brute(h, r));
      double expect = 0.0;
      if (!h.empty() && lcs > 0) {
        const double p = lcs / static_cast<double>(h.size()), q = lcs / static_cast<double>(r.size());
        expect = 2 * p * q / (p + q);
      }
      if (!near(rouge_l(h, r), expect)) return {false, "rouge_l differs from brute-force LCS"};
      ++pairs;
    }
  return {true, "examples exact; " + std::to_string(pairs) + " exhaustive pairs match brute-force LCS"};
}

// ---- 10

Outcome preprocessing() {
  Volume raw(1, 1, 3);
  raw.at(0, 0, 0) = 1500, raw.at(0, 0, 1) = -2000, raw.at(0, 0, 2) = 0;
  const Volume w = hu_window(raw);
  const bool window_ok = w.at(0, 0, 0) == 1.0 && w.at(0, 0, 1) == 0.0 && w.at(0, 0, 2) == 0.5;

  Rng rng(10);
  const Volume v = random_raw(rng, 6, 9, 7);
  const Volume same = resize(v, 6, 9, 7);
  double id_err = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) id_err = std::max(id_err, std::abs(v.voxels()[i] - same.voxels()[i]));
  const Volume c = resize(Volume(5, 4, 3, 123.25), 9, 11, 2);
  double c_err = 0.0;
  for (double x : c.voxels()) c_err = std::max(c_err, std::abs(x - 123.25));
  return {window_ok && id_err <= 1e-12 && c_err <= 1e-12 && c.depth() == 9 && c.height() == 11 && c.width() == 2,
          std::string("window ") + (window_ok ? "exact" : "wrong") + ", identity err " + fmt("%.1e", id_err) +
              ", constant err " + fmt("%.1e", c_err)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::vector<int> only;
  std::string out = ".";
  app.add_option("--only", only, "Criteria to run")->delimiter(',');
  app.add_option("--out", out, "Directory for the ablation table");
  CLI11_PARSE(app, argc, argv);

  struct Criterion {
    int id;
    const char* name;
    double limit;  // seconds, 0 = none
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> all = {
      {1, "shape laws", 10, shape_laws},
      {2, "alignment oracle equivalence", 30, alignment_oracle},
      {3, "simplex and aggregation identities", 10, simplex_identities},
      {4, "gradient verification", 120, gradient_check},
      {5, "single-sample overfit", 60, overfit},
      {6, "task-specific attention", 900, task_attention},
      {7, "format invariance", 0, format_invariance},
      {8, "ablation ordering", 2700, [&] { return ablation_ordering(out); }},
      {9, "metric oracles", 10, metric_oracles},
      {10, "preprocessing", 5, preprocessing},
  };

  int failures = 0;
  for (const auto& c : all) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = c.limit == 0 || secs < c.limit;
    const bool pass = o.pass && in_time;
    if (!pass) ++failures;
    std::printf("%s criterion %d (%s): %s [%.1f s%s]\n", pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs,
                in_time ? "" : ", over time limit");
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
