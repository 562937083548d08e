// Acceptance gate for the captioning pipeline. Each criterion prints exactly
// one PASS/FAIL line; the process exits nonzero if any check fails. Optional
// argv values select a subset of criteria, e.g. `acceptance 5 6`.
//
// Heavy checks (memorization, ablation ordering) train real models and are
// timed against pinned wall-clock budgets for a single CPU core.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "medcap/checkpoint.hpp"
#include "medcap/config.hpp"
#include "medcap/data.hpp"
#include "medcap/decode.hpp"
#include "medcap/metrics.hpp"
#include "medcap/model.hpp"
#include "medcap/pipeline.hpp"
#include "medcap/tensor.hpp"
#include "medcap/train.hpp"
#include "medcap/vision.hpp"

namespace fs = std::filesystem;
using namespace medcap;

// ---- pinned tolerances and budgets ----

// 1: finite-difference gradient audit (64-bit, central differences)
constexpr double kFdStep = 1e-5;
constexpr double kGradTol = 1e-4;
constexpr double kGradBudgetSec = 60.0;
constexpr int kGradParamsPerComponent = 10;

// 5: memorization probe. Loss bar / match count / step cap pinned after a
// pilot run on this corpus (pilot: loss crossed the bar at step 195, bottomed
// at 0.012, and greedy reproduced 16/16 captions in ~60 s).
constexpr double kMemorizeLossBar = 0.05;
constexpr int kMemorizeMinExact = 14;
constexpr int kMemorizeStepCap = 300;
constexpr double kMemorizeBudgetSec = 300.0;

// 6: trainability-ladder ordering on the 1000-sample corpus, 3 seeds per row.
constexpr double kOrderingSlack = 0.01;  // adjacent rows may invert by at most this
constexpr double kOrderingSpan = 0.03;   // top row must beat bottom row by more
constexpr double kOrderingBudgetSec = 1800.0;
constexpr int kOrderingSteps = 500;      // per-run training budget (pilot-pinned)
constexpr int kOrderingWarmup = 50;
constexpr int kOrderingMaxLen = 24;      // decode cap during validation scoring

// 9: text-overlap scores vs. brute-force oracle
constexpr double kRougePairTol = 1e-9;
constexpr double kRougeHandTol = 1e-15;

struct CheckResult {
  bool pass = false;
  std::string detail;
};

static double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

static std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof(buf), f, ap);
  va_end(ap);
  return std::string(buf);
}

// ---------------------------------------------------------------------------
// criterion 1: analytic gradients vs central finite differences
// ---------------------------------------------------------------------------

static double rel_err(double a, double n) {
  return std::fabs(a - n) / std::max({1.0, std::fabs(a), std::fabs(n)});
}

using LossFn = std::function<Tensor<double>()>;

// Checks d(loss)/d(input) for every element of every listed input tensor.
static double max_fd_err(std::vector<Tensor<double>> inputs, const LossFn& make_loss) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  Tensor<double> loss = make_loss();
  backward(loss);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (auto& t : inputs) analytic.push_back(t.grad());
  double worst = 0.0;
  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    auto& vals = inputs[ti].value();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double orig = vals[i];
      double up, dn;
      {
        NoGradGuard no_grad;
        vals[i] = orig + kFdStep;
        up = make_loss().item();
        vals[i] = orig - kFdStep;
        dn = make_loss().item();
      }
      vals[i] = orig;
      worst = std::max(worst, rel_err(analytic[ti][i], (up - dn) / (2.0 * kFdStep)));
    }
  }
  return worst;
}

static Tensor<double> randn_t(std::vector<int> shape, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> dist(0.0, sd);
  Tensor<double> t = Tensor<double>::zeros(std::move(shape));
  for (auto& v : t.value()) v = dist(rng);
  return t;
}

static CheckResult criterion1() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2024);
  std::vector<std::pair<std::string, double>> results;
  auto run = [&](const std::string& name, std::vector<Tensor<double>> inputs,
                 const LossFn& loss) { results.emplace_back(name, max_fd_err(std::move(inputs), loss)); };

  // Weighted sum pools an op output to the scalar backward() needs; fixed
  // random weights keep every output element in play.
  auto pool = [&](const Tensor<double>& w) {
    return [w](const Tensor<double>& x) { return sum(multiply(x, w)); };
  };

  {
    Tensor<double> a = randn_t({3, 4}, rng), b = randn_t({4, 5}, rng);
    auto p = pool(randn_t({3, 5}, rng));
    run("matmul", {a, b}, [=]() { return p(matmul(a, b)); });
  }
  {
    Tensor<double> a = randn_t({3, 4}, rng), b = randn_t({3, 4}, rng);
    auto p = pool(randn_t({3, 4}, rng));
    run("add", {a, b}, [=]() { return p(add(a, b)); });
  }
  {
    Tensor<double> x = randn_t({3, 4}, rng), bias = randn_t({4}, rng);
    auto p = pool(randn_t({3, 4}, rng));
    run("add_bias", {x, bias}, [=]() { return p(add_bias(x, bias)); });
  }
  {
    Tensor<double> a = randn_t({3, 4}, rng), b = randn_t({3, 4}, rng);
    auto p = pool(randn_t({3, 4}, rng));
    run("multiply", {a, b}, [=]() { return p(multiply(a, b)); });
  }
  {
    Tensor<double> a = randn_t({3, 4}, rng);
    auto p = pool(randn_t({3, 4}, rng));
    run("scale", {a}, [=]() { return p(scale(a, 1.7)); });
  }
  {
    Tensor<double> a = randn_t({3, 4}, rng);
    auto p = pool(randn_t({4, 3}, rng));
    run("transpose", {a}, [=]() { return p(transpose(a)); });
  }
  {
    Tensor<double> a = randn_t({3, 4}, rng);
    auto p = pool(randn_t({2, 6}, rng));
    run("reshape", {a}, [=]() { return p(reshape(a, {2, 6})); });
  }
  {
    Tensor<double> a = randn_t({2, 3}, rng), b = randn_t({3, 3}, rng);
    auto p = pool(randn_t({5, 3}, rng));
    run("concat rows", {a, b}, [=]() { return p(concat<double>({a, b}, 0)); });
  }
  {
    Tensor<double> a = randn_t({2, 3}, rng), b = randn_t({2, 2}, rng);
    auto p = pool(randn_t({2, 5}, rng));
    run("concat cols", {a, b}, [=]() { return p(concat<double>({a, b}, 1)); });
  }
  {
    Tensor<double> a = randn_t({4, 6}, rng);
    auto p = pool(randn_t({2, 6}, rng));
    run("slice rows", {a}, [=]() { return p(slice(a, 0, 1, 2)); });
  }
  {
    Tensor<double> a = randn_t({4, 6}, rng);
    auto p = pool(randn_t({4, 3}, rng));
    run("slice cols", {a}, [=]() { return p(slice(a, 1, 2, 3)); });
  }
  {
    Tensor<double> a = randn_t({3, 4}, rng);
    auto p = pool(randn_t({3, 4}, rng));
    run("gelu", {a}, [=]() { return p(gelu(a)); });
  }
  {
    Tensor<double> table = randn_t({6, 4}, rng);
    const std::vector<int> ids = {0, 3, 3, 5, 1};  // repeated id exercises accumulation
    auto p = pool(randn_t({5, 4}, rng));
    run("embedding_lookup", {table}, [=]() { return p(embedding_lookup(table, ids)); });
  }
  {
    Tensor<double> x = randn_t({3, 4}, rng);
    AttnMask m = AttnMask::none(3, 4);
    m.set(0, 1, true);
    m.set(2, 3, true);
    auto p = pool(randn_t({3, 4}, rng));
    // moderate fill for the standalone rule; the -1e9 fill is checked through
    // softmax below where the loss stays O(1)
    run("mask_fill", {x}, [=]() { return p(mask_fill(x, m, -2.5)); });
  }
  {
    Tensor<double> x = randn_t({3, 5}, rng);
    auto p = pool(randn_t({3, 5}, rng));
    run("softmax_rows", {x}, [=]() { return p(softmax_rows(x)); });
  }
  {
    Tensor<double> x = randn_t({3, 4}, rng);
    AttnMask m = AttnMask::none(3, 4);
    m.set(0, 2, true);
    m.set(1, 0, true);
    auto p = pool(randn_t({3, 4}, rng));
    run("softmax over masked logits", {x},
        [=]() { return p(softmax_rows(mask_fill(x, m, kMaskNeg<double>))); });
  }
  {
    Tensor<double> x = randn_t({3, 6}, rng), gain = randn_t({6}, rng, 0.5),
                   bias = randn_t({6}, rng, 0.5);
    for (auto& g : gain.value()) g += 1.0;
    auto p = pool(randn_t({3, 6}, rng));
    run("layer_norm", {x, gain, bias},
        [=]() { return p(layer_norm(x, gain, bias, 1e-5)); });
  }
  {
    Tensor<double> logits = randn_t({4, 5}, rng);
    const std::vector<int> targets = {1, 4, 0, 2};
    auto p = pool(randn_t({4}, rng));
    run("cross_entropy_rows", {logits}, [=]() { return p(cross_entropy_rows(logits, targets)); });
  }
  {
    Tensor<double> a = randn_t({3, 4}, rng);
    run("sum", {a}, [=]() { return scale(sum(a), 1.3); });
  }
  {
    Tensor<double> a = randn_t({3, 4}, rng);
    run("mean", {a}, [=]() { return scale(mean(a), 2.0); });
  }

  // End-to-end: loss gradients for random parameter subsets in each component.
  RunConfig rc;
  rc.image_size = 56;
  rc.d_v = 32;
  rc.vision_depth = 2;
  rc.vision_heads = 2;
  rc.qformer_k = 4;
  rc.d_q = 32;
  rc.qformer_depth = 2;
  rc.qformer_heads = 2;
  rc.d_lm = 32;
  rc.lm_depth = 2;
  rc.lm_heads = 2;
  rc.soft_prompt_len = 4;
  rc.max_positions = 64;
  rc.mlp_ratio = 2;
  rc.prompt_text = "findings:";
  ModelConfig mc = model_config(rc);
  mc.lm.vocab_size = 20;
  Captioner<double> model(mc, 99);
  model.apply_trainability({true, LmMode::kFull, rc.image_size});
  model.lm().set_soft_trainable(true);  // every component on the tape at once

  const SynthSpec spec{16, 56, 5, true};
  const Tensor<double> patches = patchify<double>(render_sample(spec, 3).image, mc.vision);
  const std::vector<int> prompt_ids = {5, 9, 12};
  const std::vector<int> target_ids = {4, 11, 7, 18, 6, 2};
  auto model_loss = [&]() {
    Tensor<double> prefix = model.encode_prefix_from_patches(patches);
    Tensor<double> logits = model.lm().forward_logits(&prefix, prompt_ids, target_ids);
    return mean(cross_entropy_rows(logits, target_ids));
  };

  ParamList<double> all = model.params();
  for (auto& p : all) p.tensor.zero_grad();
  {
    Tensor<double> loss = model_loss();
    backward(loss);
  }

  ParamList<double> vision_p, qformer_p, base_p, soft_p;
  model.vision().collect("vision", vision_p);
  model.bridge().collect("qformer", qformer_p);
  model.lm().collect_base("lm", base_p);
  model.lm().collect_soft("lm", soft_p);
  const std::vector<std::pair<std::string, ParamList<double>*>> components = {
      {"vision", &vision_p}, {"bridge", &qformer_p}, {"soft prompts", &soft_p}, {"lm", &base_p}};

  for (const auto& [comp_name, list] : components) {
    double worst = 0.0;
    for (int k = 0; k < kGradParamsPerComponent; ++k) {
      auto& entry = (*list)[rng() % list->size()];
      const std::size_t elem = rng() % entry.tensor.numel();
      const double analytic = entry.tensor.grad()[elem];
      const double orig = entry.tensor.value()[elem];
      double up, dn;
      {
        NoGradGuard no_grad;
        entry.tensor.value()[elem] = orig + kFdStep;
        up = model_loss().item();
        entry.tensor.value()[elem] = orig - kFdStep;
        dn = model_loss().item();
      }
      entry.tensor.value()[elem] = orig;
      worst = std::max(worst, rel_err(analytic, (up - dn) / (2.0 * kFdStep)));
    }
    results.emplace_back("loss wrt " + comp_name, worst);
  }

  double overall = 0.0;
  std::string worst_name;
  for (const auto& [name, err] : results) {
    if (err >= overall) {
      overall = err;
      worst_name = name;
    }
  }
  const double elapsed = seconds_since(t0);
  CheckResult r;
  r.pass = overall < kGradTol && elapsed < kGradBudgetSec;
  r.detail = fmt("max rel err %.2e (worst: %s) over %zu checks, tol %.0e, %.1f s (budget %.0f s)",
                 overall, worst_name.c_str(), results.size(), kGradTol, elapsed, kGradBudgetSec);
  return r;
}

// ---------------------------------------------------------------------------
// criterion 2: patch-count law
// ---------------------------------------------------------------------------

static CheckResult criterion2() {
  VisionConfig cfg;  // patch 14, class token on
  const int n364 = vision_seq_len(cfg, 364, 364);
  const int n224 = vision_seq_len(cfg, 224, 224);
  CheckResult r;
  r.pass = n364 == 677 && n224 == 257;
  r.detail = fmt("364x364 -> %d tokens (want 677), 224x224 -> %d (want 257)", n364, n224);
  return r;
}

// ---------------------------------------------------------------------------
// criterion 3: soft-prompt parameter count
// ---------------------------------------------------------------------------

static CheckResult criterion3() {
  const long long n = count_ptuning_params(28, 4, 4096);
  CheckResult r;
  r.pass = n == 917504;
  r.detail = fmt("count_ptuning_params(28, 4, 4096) = %lld (want 917504)", n);
  return r;
}

// ---------------------------------------------------------------------------
// criterion 4: freeze contracts over a real 200-step run
// ---------------------------------------------------------------------------

static std::vector<std::vector<float>> values_of(const ParamList<float>& list) {
  std::vector<std::vector<float>> out;
  out.reserve(list.size());
  for (const auto& p : list) out.push_back(p.tensor.value());
  return out;
}

static bool bytes_equal(const std::vector<std::vector<float>>& a,
                        const std::vector<std::vector<float>>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].size() != b[i].size()) return false;
    if (std::memcmp(a[i].data(), b[i].data(), a[i].size() * sizeof(float)) != 0) return false;
  }
  return true;
}

static CheckResult criterion4() {
  const auto t0 = std::chrono::steady_clock::now();
  const RunConfig defaults;
  const SynthSpec spec{16, 112, 7, true};
  const Dataset data = synth_dataset(spec, defaults.prompt_text);

  auto run_row = [&](const std::string& mode) {
    RunConfig rc;
    rc.vision_trainable = false;
    rc.lm_mode = mode;
    rc.max_steps = 200;
    rc.epochs = 50;     // 16 samples at batch 2 -> 8 steps per epoch
    rc.batch_size = 2;  // keeps the 200-step run fast on one core
    ModelConfig mc = apply_ablation(model_config(rc), ablation_spec(rc));
    mc.lm.vocab_size = data.vocab.size();
    Captioner<float> model(mc, rc.seed);
    Trainer<float> trainer(model, data, train_config(rc), ablation_spec(rc));

    ParamList<float> base, vis, soft;
    model.lm().collect_base("lm", base);
    model.vision().collect("vision", vis);
    model.lm().collect_soft("lm", soft);
    const auto base0 = values_of(base);
    const auto vis0 = values_of(vis);
    const auto soft0 = values_of(soft);
    const TrainStats stats = trainer.run();

    struct Out {
      long long steps;
      bool base_same, vis_same, soft_same, has_soft;
    } out{stats.steps, bytes_equal(base0, values_of(base)), bytes_equal(vis0, values_of(vis)),
          bytes_equal(soft0, values_of(soft)), !soft.empty()};
    return out;
  };

  const auto pt = run_row("ptuning");   // frozen base + frozen vision + live soft prompts
  const auto fz = run_row("frozen");    // everything frozen except the bridge
  CheckResult r;
  r.pass = pt.steps == 200 && fz.steps == 200 && pt.base_same && pt.vis_same && pt.has_soft &&
           !pt.soft_same && fz.base_same && fz.vis_same;
  r.detail = fmt(
      "ptuning row: base %s, vision %s, soft prompts %s; frozen row: base %s, vision %s (%.0f s)",
      pt.base_same ? "identical" : "CHANGED", pt.vis_same ? "identical" : "CHANGED",
      pt.soft_same ? "STUCK" : "moved", fz.base_same ? "identical" : "CHANGED",
      fz.vis_same ? "identical" : "CHANGED", seconds_since(t0));
  return r;
}

// ---------------------------------------------------------------------------
// criterion 5: 16-sample memorization probe
// ---------------------------------------------------------------------------

static CheckResult criterion5() {
  const auto t0 = std::chrono::steady_clock::now();
  RunConfig rc;  // desk defaults
  rc.seed = 7;
  rc.max_steps = kMemorizeStepCap;
  rc.epochs = 1000;
  rc.augment = false;  // a memorization probe needs a stable target per sample
  const SynthSpec spec{16, 112, 7, true};
  const Dataset data = synth_dataset(spec, rc.prompt_text);
  ModelConfig mc = apply_ablation(model_config(rc), ablation_spec(rc));
  mc.lm.vocab_size = data.vocab.size();
  Captioner<float> model(mc, rc.seed);
  Trainer<float> trainer(model, data, train_config(rc), ablation_spec(rc));
  std::ostringstream metrics;
  trainer.run(&metrics);

  double min_loss = 1e30;
  long long first_below = -1;
  {
    std::istringstream in(metrics.str());
    std::string line;
    while (std::getline(in, line)) {
      long long step;
      double lr, loss_mean, loss_sum;
      if (std::sscanf(line.c_str(), "%lld %lf %lf %lf", &step, &lr, &loss_mean, &loss_sum) == 4) {
        min_loss = std::min(min_loss, loss_mean);
        if (first_below < 0 && loss_mean < kMemorizeLossBar) first_below = step;
      }
    }
  }

  DecodeConfig dc = decode_config(rc);
  dc.beam_size = 1;  // greedy
  int exact = 0;
  for (const auto& sample : data.samples)
    if (generate_report(model, data, sample, dc) == sample.caption) ++exact;

  const double elapsed = seconds_since(t0);
  CheckResult r;
  r.pass = min_loss < kMemorizeLossBar && exact >= kMemorizeMinExact && elapsed < kMemorizeBudgetSec;
  r.detail = fmt(
      "min loss %.4f (bar %.2f, first below at step %lld), greedy exact %d/16 (need >= %d), "
      "%.0f s (budget %.0f s)",
      min_loss, kMemorizeLossBar, first_below, exact, kMemorizeMinExact, elapsed,
      kMemorizeBudgetSec);
  return r;
}

// ---------------------------------------------------------------------------
// criterion 6: trainability ladder ordering on the 1000-sample corpus
// ---------------------------------------------------------------------------

static CheckResult criterion6() {
  const auto t0 = std::chrono::steady_clock::now();
  const RunConfig defaults;
  const SynthSpec spec{1000, 112, 7, true};
  const Dataset full = synth_dataset(spec, defaults.prompt_text);
  Dataset train_ds{full.vocab, full.prompt_ids, {}};
  Dataset val_ds{full.vocab, full.prompt_ids, {}};
  for (const auto& s : full.samples) {
    const Split sp = split_of_index(s.index);
    if (sp == Split::kTrain) train_ds.samples.push_back(s);
    if (sp == Split::kVal) val_ds.samples.push_back(s);
  }

  struct Row {
    const char* name;
    bool vision_trainable;
    const char* lm_mode;
    int image_size;
  };
  const std::vector<Row> rows = {{"frozen-lm", false, "frozen", 56},
                                 {"ptuning", false, "ptuning", 56},
                                 {"vision+ptuning", true, "ptuning", 56},
                                 {"vision+ptuning@112", true, "ptuning", 112}};
  const std::vector<uint64_t> seeds = {7, 8, 9};

  std::vector<double> mean_f1;
  for (const auto& row : rows) {
    double acc = 0.0;
    for (uint64_t seed : seeds) {
      RunConfig rc;
      rc.seed = seed;
      rc.vision_trainable = row.vision_trainable;
      rc.lm_mode = row.lm_mode;
      rc.image_size = row.image_size;
      rc.max_steps = kOrderingSteps;
      rc.warmup_steps = kOrderingWarmup;
      rc.epochs = 100;
      ModelConfig mc = apply_ablation(model_config(rc), ablation_spec(rc));
      mc.lm.vocab_size = full.vocab.size();
      Captioner<float> model(mc, seed);
      Trainer<float> trainer(model, train_ds, train_config(rc), ablation_spec(rc));
      trainer.run();

      DecodeConfig dc = decode_config(rc);
      dc.beam_size = 1;
      dc.max_len = kOrderingMaxLen;
      std::vector<std::pair<std::string, std::string>> pairs;
      pairs.reserve(val_ds.samples.size());
      for (const auto& sample : val_ds.samples)
        pairs.emplace_back(generate_report(model, val_ds, sample, dc), sample.caption);
      const double f1 = corpus_rouge1(pairs).mean_f1;
      acc += f1;
      std::cerr << "  [ordering] " << row.name << " seed " << seed << " val f1 " << f1 << " ("
                << static_cast<long long>(seconds_since(t0)) << " s elapsed)\n";
    }
    mean_f1.push_back(acc / static_cast<double>(seeds.size()));
  }

  bool ordered = true;
  for (std::size_t i = 1; i < mean_f1.size(); ++i)
    if (mean_f1[i] < mean_f1[i - 1] - kOrderingSlack) ordered = false;
  const double span = mean_f1.back() - mean_f1.front();
  const double elapsed = seconds_since(t0);
  CheckResult r;
  r.pass = ordered && span > kOrderingSpan && elapsed < kOrderingBudgetSec;
  r.detail = fmt(
      "mean val f1: frozen %.3f <= ptuning %.3f <= vision+ptuning %.3f <= @112 %.3f "
      "(slack %.2f), span %.3f (need > %.2f), %.0f s (budget %.0f s)",
      mean_f1[0], mean_f1[1], mean_f1[2], mean_f1[3], kOrderingSlack, span, kOrderingSpan, elapsed,
      kOrderingBudgetSec);
  return r;
}

// ---------------------------------------------------------------------------
// criteria 7/8: decoding against exhaustive enumeration and constraint checks
// ---------------------------------------------------------------------------

static uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Deterministic pseudo-random model: logits depend on the whole history.
static StepFn hashed_step(int vocab, uint64_t salt) {
  return [vocab, salt](const std::vector<int>& generated) {
    uint64_t h = mix64(salt ^ 0x243f6a8885a308d3ull);
    for (int t : generated) h = mix64(h ^ (static_cast<uint64_t>(t) + 0x51ed270bull));
    std::vector<double> logits(static_cast<std::size_t>(vocab));
    for (int v = 0; v < vocab; ++v) {
      h = mix64(h);
      logits[static_cast<std::size_t>(v)] = static_cast<double>(h % 8000) / 1000.0 - 4.0;
    }
    return logits;
  };
}

struct EnumHyp {
  std::vector<int> ids;
  double lp = 0.0;
  bool finished = false;
};

// Exhaustive reference decoder: walks every token sequence, applying the same
// penalty/min-length/normalization rules from their definitions.
static void enum_expand(const StepFn& step, const DecodeConfig& cfg, std::vector<int>& ids,
                        double lp, std::vector<EnumHyp>& out) {
  if (static_cast<int>(ids.size()) == cfg.max_len) {
    out.push_back({ids, lp, false});
    return;
  }
  std::vector<double> logits = step(ids);
  std::set<int> seen(ids.begin(), ids.end());
  for (int id : seen) {
    if (id < 0 || id >= static_cast<int>(logits.size())) continue;
    logits[static_cast<std::size_t>(id)] = logits[static_cast<std::size_t>(id)] > 0
                                               ? logits[static_cast<std::size_t>(id)] / cfg.repetition_penalty
                                               : logits[static_cast<std::size_t>(id)] * cfg.repetition_penalty;
  }
  const bool eos_blocked = static_cast<int>(ids.size()) < cfg.min_len;
  if (eos_blocked && cfg.eos_id >= 0 && cfg.eos_id < static_cast<int>(logits.size()))
    logits[static_cast<std::size_t>(cfg.eos_id)] = -1e9;  // masked before normalization
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  const double lse = mx + std::log(z);
  for (int v = 0; v < static_cast<int>(logits.size()); ++v) {
    const double child_lp = lp + logits[static_cast<std::size_t>(v)] - lse;
    ids.push_back(v);
    if (v == cfg.eos_id) {
      if (!eos_blocked) out.push_back({ids, child_lp, true});
    } else {
      enum_expand(step, cfg, ids, child_lp, out);
    }
    ids.pop_back();
  }
}

static std::vector<EnumHyp> enumerate_best(const StepFn& step, const DecodeConfig& cfg) {
  std::vector<EnumHyp> all;
  std::vector<int> ids;
  enum_expand(step, cfg, ids, 0.0, all);
  std::sort(all.begin(), all.end(), [](const EnumHyp& a, const EnumHyp& b) {
    if (a.lp != b.lp) return a.lp > b.lp;
    return a.ids < b.ids;
  });
  if (static_cast<int>(all.size()) > cfg.beam_size) all.resize(static_cast<std::size_t>(cfg.beam_size));
  return all;
}

static CheckResult criterion7() {
  // vocab 3 with a 3-step horizon has at most 8 live prefixes, so beam 8
  // covers the whole reachable set and must return the exact optimum.
  DecodeConfig toy;
  toy.beam_size = 8;
  toy.repetition_penalty = 1.7;
  toy.min_len = 1;
  toy.max_len = 3;
  toy.eos_id = 2;
  int toy_fail = -1;
  for (uint64_t salt = 1; salt <= 10 && toy_fail < 0; ++salt) {
    const StepFn step = hashed_step(3, salt);
    const auto want = enumerate_best(step, toy);
    const auto got = beam_search(step, toy);
    if (got.size() != want.size()) {
      toy_fail = static_cast<int>(salt);
      break;
    }
    for (std::size_t i = 0; i < want.size(); ++i) {
      if (got[i].ids != want[i].ids || got[i].finished != want[i].finished ||
          std::fabs(got[i].log_prob - want[i].lp) > 1e-12)
        toy_fail = static_cast<int>(salt);
    }
  }

  DecodeConfig g;
  g.beam_size = 1;
  g.repetition_penalty = 2.0;
  g.min_len = 2;
  g.max_len = 8;
  g.eos_id = 2;
  int greedy_fail = -1;
  for (uint64_t salt = 100; salt < 120 && greedy_fail < 0; ++salt) {
    const StepFn step = hashed_step(6, salt);
    const auto beam1 = beam_search(step, g);
    const auto greedy = greedy_decode(step, g);
    if (beam1.empty() || beam1.front().ids != greedy.ids ||
        beam1.front().finished != greedy.finished)
      greedy_fail = static_cast<int>(salt);
  }

  CheckResult r;
  r.pass = toy_fail < 0 && greedy_fail < 0;
  r.detail = fmt(
      "beam-8 matches exhaustive enumeration on 10 toy models%s; beam-1 == greedy on 20 models%s",
      toy_fail < 0 ? "" : fmt(" (FAILED at salt %d)", toy_fail).c_str(),
      greedy_fail < 0 ? "" : fmt(" (FAILED at salt %d)", greedy_fail).c_str());
  return r;
}

static CheckResult criterion8() {
  DecodeConfig dc;  // desk defaults: beam 5, penalty 2.0, lengths [8, 64]
  auto content_len = [](const BeamHypothesis& h) {
    return static_cast<int>(h.ids.size()) - (h.finished ? 1 : 0);
  };
  auto repeated_rate = [&](const BeamHypothesis& h) {
    const int len = content_len(h);
    std::set<int> distinct(h.ids.begin(), h.ids.begin() + len);
    return static_cast<double>(len - static_cast<int>(distinct.size())) / len;
  };

  int in_window = 0;
  double rate_penalized = 0.0, rate_plain = 0.0;
  const int n = 200;
  for (int i = 0; i < n; ++i) {
    const StepFn step = hashed_step(24, 7000 + static_cast<uint64_t>(i));
    const auto top = beam_search(step, dc).front();
    const int len = content_len(top);
    if (len >= dc.min_len && len <= dc.max_len) ++in_window;
    rate_penalized += repeated_rate(top);
    DecodeConfig plain = dc;
    plain.repetition_penalty = 1.0;
    rate_plain += repeated_rate(beam_search(step, plain).front());
  }
  rate_penalized /= n;
  rate_plain /= n;

  CheckResult r;
  r.pass = in_window == n && rate_penalized < rate_plain;
  r.detail = fmt(
      "%d/%d outputs inside [%d, %d] tokens; mean repeated-unigram rate %.4f (penalty 2.0) vs "
      "%.4f (penalty 1.0)",
      in_window, n, dc.min_len, dc.max_len, rate_penalized, rate_plain);
  return r;
}

// ---------------------------------------------------------------------------
// criterion 9: unigram-overlap scores vs brute-force oracle
// ---------------------------------------------------------------------------

struct OracleScore {
  double p = 0.0, r = 0.0, f1 = 0.0;
};

static OracleScore rouge_oracle(const std::string& cand, const std::string& ref) {
  auto counts = [](const std::string& text) {
    std::map<std::string, int> c;
    for (const auto& t : metric_tokenize(text)) ++c[t];
    return c;
  };
  const auto cc = counts(cand), rc = counts(ref);
  long long cand_n = 0, ref_n = 0, overlap = 0;
  for (const auto& [t, n] : cc) cand_n += n;
  for (const auto& [t, n] : rc) ref_n += n;
  for (const auto& [t, n] : cc) {
    const auto it = rc.find(t);
    if (it != rc.end()) overlap += std::min(n, it->second);
  }
  OracleScore s;
  if (cand_n > 0) s.p = static_cast<double>(overlap) / static_cast<double>(cand_n);
  if (ref_n > 0) s.r = static_cast<double>(overlap) / static_cast<double>(ref_n);
  if (s.p + s.r > 0) s.f1 = 2.0 * s.p * s.r / (s.p + s.r);
  return s;
}

static CheckResult criterion9() {
  const std::vector<std::string> pool = {"ct",    "image", "scan",   "showing", "a",    "the",
                                         "lesion", "mass",  "circle", "arrow",   "left", "right",
                                         "upper",  "lower", "margin", "center",  "with", "marked"};
  std::mt19937_64 rng(31);
  auto sentence = [&]() {
    std::uniform_int_distribution<int> len_d(0, 14);
    const int len = len_d(rng);
    std::string out;
    for (int i = 0; i < len; ++i) {
      if (i) out += ' ';
      out += pool[rng() % pool.size()];
    }
    return out;
  };

  double worst = 0.0;
  for (int i = 0; i < 500; ++i) {
    const std::string cand = sentence(), ref = sentence();
    const ScoredPair got = rouge1(cand, ref);
    const OracleScore want = rouge_oracle(cand, ref);
    worst = std::max({worst, std::fabs(got.precision - want.p), std::fabs(got.recall - want.r),
                      std::fabs(got.f1 - want.f1)});
  }

  const double exact1 = rouge1("the scan shows a mass", "the scan shows a mass").f1;
  const double twothirds = rouge1("a b", "a b c d").f1;          // p 1, r 1/2 -> f1 2/3
  const double pointfour = rouge1("a b", "a b c d e f g h").f1;  // p 1, r 1/4 -> f1 0.4
  const bool hand_ok = exact1 == 1.0 && std::fabs(twothirds - 2.0 / 3.0) <= kRougeHandTol &&
                       std::fabs(pointfour - 0.4) <= kRougeHandTol;

  CheckResult r;
  r.pass = worst < kRougePairTol && hand_ok;
  r.detail = fmt(
      "500 random pairs: max deviation %.2e vs oracle (tol %.0e); hand cases f1 = %.1f / %.6f / "
      "%.6f",
      worst, kRougePairTol, exact1, twothirds, pointfour);
  return r;
}

// ---------------------------------------------------------------------------
// criterion 10: bit-for-bit determinism of the full ablation pipeline
// ---------------------------------------------------------------------------

static std::map<std::string, std::string> read_tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    out[fs::relative(e.path(), root).string()] = buf.str();
  }
  return out;
}

static CheckResult criterion10() {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path work = fs::temp_directory_path() / "medcap_acceptance" / "determinism";
  fs::remove_all(work);
  fs::create_directories(work);

  const SynthSpec spec{60, 112, 11, true};
  RunConfig rc;
  generate_corpus(spec, work / "corpus", rc.prompt_text);
  rc.seed = 7;
  rc.max_steps = 6;
  rc.epochs = 1;
  rc.warmup_steps = 2;
  rc.beam_size = 1;
  rc.max_len = 16;
  run_ablate(rc, work / "corpus", work / "runA");
  run_ablate(rc, work / "corpus", work / "runB");

  const auto a = read_tree(work / "runA");
  const auto b = read_tree(work / "runB");
  int mismatched = 0;
  for (const auto& [rel, bytes] : a) {
    const auto it = b.find(rel);
    if (it == b.end() || it->second != bytes) ++mismatched;
  }
  CheckResult r;
  r.pass = !a.empty() && a.size() == b.size() && mismatched == 0;
  r.detail = fmt("two identical-seed ablation sweeps: %zu files, %d byte mismatches (%.0f s)",
                 a.size(), mismatched, seconds_since(t0));
  return r;
}

// ---------------------------------------------------------------------------

int main(int argc, char** argv) {
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  const std::vector<std::pair<int, CheckResult (*)()>> checks = {
      {1, criterion1}, {2, criterion2}, {3, criterion3}, {4, criterion4}, {5, criterion5},
      {6, criterion6}, {7, criterion7}, {8, criterion8}, {9, criterion9}, {10, criterion10}};

  int failures = 0, ran = 0;
  for (const auto& [num, fn] : checks) {
    if (!selected.empty() && !selected.count(num)) continue;
    ++ran;
    CheckResult res;
    try {
      res = fn();
    } catch (const std::exception& e) {
      res.pass = false;
      res.detail = std::string("exception: ") + e.what();
    }
    if (!res.pass) ++failures;
    std::cout << "criterion " << num << ": " << (res.pass ? "PASS" : "FAIL") << " — "
              << res.detail << "\n"
              << std::flush;
  }
  std::cout << "acceptance: " << (ran - failures) << "/" << ran << " criteria passed\n";
  return failures == 0 ? 0 : 1;
}
