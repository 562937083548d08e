#pragma once

// Optimization loop: AdamW with decoupled weight decay, linear warmup into a
// cosine-annealed learning rate, global-norm gradient clipping, and per-step
// metrics logging. Frozen tensors are never touched by the optimizer.

#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include "medcap/data.hpp"
#include "medcap/errors.hpp"
#include "medcap/model.hpp"
#include "medcap/rng.hpp"

namespace medcap {

struct TrainConfig {
  int batch_size = 8;
  int epochs = 10;
  double peak_lr = 1e-3;
  double weight_decay = 0.05;
  int warmup_steps = 50;
  int max_report_len = 24;
  uint64_t seed = 7;
  double clip_norm = 1.0;
  int max_steps = 0;   // 0 = run all epochs; otherwise cap total steps
  bool augment = true;  // random resized crop + horizontal flip during training
};

// Linear ramp 0 -> peak over warmup_steps, then cosine anneal to 0 at
// total_steps. `step` counts completed-update index starting at 1.
inline double lr_at(long long step, const TrainConfig& cfg, long long total_steps) {
  if (step < 0 || step > total_steps)
    throw ConfigError("lr_at: step " + std::to_string(step) + " outside [0, " +
                      std::to_string(total_steps) + "]");
  const double peak = cfg.peak_lr;
  const long long warmup = cfg.warmup_steps;
  if (warmup > 0 && step <= warmup) return peak * static_cast<double>(step) / warmup;
  if (total_steps <= warmup) return peak;
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(total_steps - warmup);
  return peak * 0.5 * (1.0 + std::cos(M_PI * progress));
}

// Scales all trainable gradients so their global L2 norm is at most `clip`.
// Returns the pre-clip norm.
template <typename S>
double clip_global_norm(ParamList<S>& params, double clip) {
  double sq = 0.0;
  for (auto& p : params) {
    if (!p.tensor.trainable()) continue;
    for (S g : p.tensor.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (clip > 0 && norm > clip) {
    const S scale_by = static_cast<S>(clip / norm);
    for (auto& p : params) {
      if (!p.tensor.trainable()) continue;
      for (S& g : p.tensor.grad()) g *= scale_by;
    }
  }
  return norm;
}

template <typename S>
class AdamW {
 public:
  AdamW() = default;
  AdamW(ParamList<S> params, double weight_decay)
      : params_(std::move(params)), weight_decay_(weight_decay) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(params_[i].tensor.numel(), S(0));
      v_[i].assign(params_[i].tensor.numel(), S(0));
    }
  }

  void step(double lr) {
    ++t_;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      if (!p.tensor.trainable()) continue;
      auto& w = p.tensor.value();
      auto& g = p.tensor.grad();
      for (S gv : g)
        if (!std::isfinite(static_cast<double>(gv)))
          throw NumericError("non-finite gradient in " + p.name + " at optimizer step " +
                             std::to_string(t_));
      if (p.decay && weight_decay_ > 0)
        for (auto& wv : w) wv -= static_cast<S>(lr * weight_decay_) * wv;
      for (size_t k = 0; k < w.size(); ++k) {
        const double gd = static_cast<double>(g[k]);
        const double m = b1 * static_cast<double>(m_[i][k]) + (1 - b1) * gd;
        const double v = b2 * static_cast<double>(v_[i][k]) + (1 - b2) * gd * gd;
        m_[i][k] = static_cast<S>(m);
        v_[i][k] = static_cast<S>(v);
        w[k] -= static_cast<S>(lr * (m / bc1) / (std::sqrt(v / bc2) + eps));
      }
    }
  }

  long long step_count() const { return t_; }
  const ParamList<S>& params() const { return params_; }
  std::vector<std::vector<S>>& moment1() { return m_; }
  std::vector<std::vector<S>>& moment2() { return v_; }
  const std::vector<std::vector<S>>& moment1() const { return m_; }
  const std::vector<std::vector<S>>& moment2() const { return v_; }
  void set_step_count(long long t) { t_ = t; }

 private:
  ParamList<S> params_;
  double weight_decay_ = 0.0;
  long long t_ = 0;
  std::vector<std::vector<S>> m_, v_;
};

struct TrainStats {
  long long steps = 0;
  double last_loss_mean = 0.0;
  double last_loss_sum = 0.0;
};

template <typename S>
class Trainer {
 public:
  Trainer(Captioner<S>& model, const Dataset& data, const TrainConfig& cfg,
          const AblationSpec& spec)
      : model_(model), data_(data), cfg_(cfg) {
    model_.apply_trainability(spec);
    params_ = model_.params();
    opt_ = AdamW<S>(params_, cfg.weight_decay);
  }

  long long total_steps() const {
    const long long n = static_cast<long long>(data_.samples.size());
    const long long per_epoch = (n + cfg_.batch_size - 1) / cfg_.batch_size;
    long long total = per_epoch * cfg_.epochs;
    if (cfg_.max_steps > 0) total = std::min<long long>(total, cfg_.max_steps);
    return total;
  }

  // Metrics lines: step<TAB>lr<TAB>loss_mean<TAB>loss_sum.
  TrainStats run(std::ostream* metrics = nullptr, std::ostream* progress = nullptr) {
    if (data_.samples.empty()) throw DataError("training dataset is empty");
    const long long total = total_steps();
    if (cfg_.warmup_steps >= total)
      throw ConfigError("warmup_steps " + std::to_string(cfg_.warmup_steps) +
                        " must be below total steps " + std::to_string(total));
    auto shuffle_rng = make_rng(derive_seed(cfg_.seed, "shuffle"));
    auto augment_rng = make_rng(derive_seed(cfg_.seed, "augment"));
    const int input_size = model_.vision().config().image_size;
    TrainStats stats;
    long long step = 0;
    for (int epoch = 0; epoch < cfg_.epochs && step < total; ++epoch) {
      auto batches = make_batches(data_, cfg_.batch_size, shuffle_rng, cfg_.max_report_len);
      for (const auto& batch : batches) {
        if (step >= total) break;
        ++step;
        const double lr = lr_at(step, cfg_, total);
        for (auto& p : params_) p.tensor.zero_grad();
        Tensor<S> nll_sum;
        long long tokens = 0;
        for (size_t i = 0; i < batch.sample_pos.size(); ++i) {
          const Sample& sample = data_.samples[static_cast<size_t>(batch.sample_pos[i])];
          ImageTensor img = cfg_.augment ? medcap::augment(sample.image, input_size, augment_rng)
                                         : resize_for_inference(sample.image, input_size);
          std::vector<int> target;
          for (size_t k = 0; k < batch.targets[i].size(); ++k)
            if (batch.target_mask[i][k]) target.push_back(batch.targets[i][k]);
          if (target.empty()) throw DataError("all-pad target in batch");
          Tensor<S> logits = model_.forward_logits(img, data_.prompt_ids, target);
          Tensor<S> sample_sum = sum(cross_entropy_rows(logits, target));
          nll_sum = nll_sum.defined() ? add(nll_sum, sample_sum) : sample_sum;
          tokens += static_cast<long long>(target.size());
        }
        Tensor<S> loss_mean = scale(nll_sum, S(1) / static_cast<S>(tokens));
        const double mean_value = static_cast<double>(loss_mean.item());
        if (!std::isfinite(mean_value))
          throw NumericError("non-finite loss at step " + std::to_string(step));
        backward(loss_mean);
        clip_global_norm(params_, cfg_.clip_norm);
        opt_.step(lr);
        stats.steps = step;
        stats.last_loss_mean = mean_value;
        stats.last_loss_sum = mean_value * static_cast<double>(tokens);
        if (metrics) {
          char line[128];
          std::snprintf(line, sizeof(line), "%lld\t%.9g\t%.9g\t%.9g\n", step, lr, mean_value,
                        stats.last_loss_sum);
          *metrics << line;
        }
        if (progress && (step % 20 == 0 || step == total))
          *progress << "step " << step << "/" << total << " loss " << mean_value << "\n";
      }
    }
    if (metrics) metrics->flush();
    return stats;
  }

  AdamW<S>& optimizer() { return opt_; }
  ParamList<S>& params() { return params_; }

 private:
  Captioner<S>& model_;
  const Dataset& data_;
  TrainConfig cfg_;
  ParamList<S> params_;
  AdamW<S> opt_;
};

}  // namespace medcap
