#pragma once

// Query Transformer: K learnable query tokens compress the N-row image
// feature matrix into K rows via interleaved self- and cross-attention, then
// project into the language model's embedding space. Cross-attention sits in
// blocks with even 1-based index when cross_attn_period == 2 (blocks 2, 4, …).

#include <iostream>
#include <string>
#include <vector>

#include "medcap/errors.hpp"
#include "medcap/nn.hpp"

namespace medcap {

struct QFormerConfig {
  int K = 8;
  int d_q = 64;
  int depth = 2;
  int heads = 4;
  int cross_attn_period = 2;
  int d_v = 64;   // incoming image-feature width
  int d_lm = 128;  // output projection width
  int mlp_ratio = 4;
};

inline int count_cross_attn_layers(const QFormerConfig& cfg) {
  if (cfg.cross_attn_period < 1) throw ConfigError("qformer: cross_attn_period must be >= 1");
  return cfg.depth / cfg.cross_attn_period;
}

template <typename S>
class QFormerBlock {
 public:
  QFormerBlock() = default;
  QFormerBlock(const QFormerConfig& cfg, bool has_cross, std::mt19937_64& rng)
      : has_cross_(has_cross),
        ln_self_(cfg.d_q),
        self_attn_(cfg.d_q, cfg.d_q, cfg.heads, rng),
        ln_mlp_(cfg.d_q),
        mlp_(cfg.d_q, cfg.d_q * cfg.mlp_ratio, rng) {
    if (has_cross) {
      ln_cross_ = LayerNormLayer<S>(cfg.d_q);
      // Zero-initialized output projection: the residual stream ignores the
      // image at step 0, which keeps early training stable.
      cross_attn_ = MultiHeadAttention<S>(cfg.d_q, cfg.d_v, cfg.heads, rng, /*zero_init_out=*/true);
    }
  }

  Tensor<S> forward(const Tensor<S>& x, const Tensor<S>& image_feats) const {
    Tensor<S> h = ln_self_.forward(x);
    Tensor<S> y = add(x, self_attn_.forward(h, h));
    if (has_cross_) y = add(y, cross_attn_.forward(ln_cross_.forward(y), image_feats));
    return add(y, mlp_.forward(ln_mlp_.forward(y)));
  }

  void collect(const std::string& prefix, ParamList<S>& out) {
    ln_self_.collect(prefix + ".ln_self", out);
    self_attn_.collect(prefix + ".self_attn", out);
    if (has_cross_) {
      ln_cross_.collect(prefix + ".ln_cross", out);
      cross_attn_.collect(prefix + ".cross_attn", out);
    }
    ln_mlp_.collect(prefix + ".ln_mlp", out);
    mlp_.collect(prefix + ".mlp", out);
  }

  bool has_cross() const { return has_cross_; }
  MultiHeadAttention<S>& cross_attn() { return cross_attn_; }

 private:
  bool has_cross_ = false;
  LayerNormLayer<S> ln_self_;
  MultiHeadAttention<S> self_attn_;
  LayerNormLayer<S> ln_cross_;
  MultiHeadAttention<S> cross_attn_;
  LayerNormLayer<S> ln_mlp_;
  Mlp<S> mlp_;
};

template <typename S>
class QFormer {
 public:
  QFormer() = default;
  QFormer(const QFormerConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
    if (cfg.d_q % cfg.heads != 0) throw ConfigError("qformer: d_q not divisible by heads");
    if (count_cross_attn_layers(cfg) == 0)
      std::cerr << "warning: qformer depth " << cfg.depth << " with cross_attn_period "
                << cfg.cross_attn_period << " instantiates no cross-attention; "
                << "the bridge never sees the image\n";
    queries_ = normal_init<S>({cfg.K, cfg.d_q}, S(0.02), rng);
    queries_.set_trainable(true);
    blocks_.reserve(static_cast<size_t>(cfg.depth));
    for (int i = 1; i <= cfg.depth; ++i)
      blocks_.emplace_back(cfg, /*has_cross=*/(i % cfg.cross_attn_period == 0), rng);
    final_ln_ = LayerNormLayer<S>(cfg.d_q);
    out_proj_ = Linear<S>(cfg.d_q, cfg.d_lm, rng);
  }

  // image_feats: N x d_v with N > K. Returns K x d_lm.
  Tensor<S> bridge(const Tensor<S>& image_feats) const {
    const int n = image_feats.shape()[0];
    if (n <= cfg_.K)
      throw ConfigError("qformer: image sequence length " + std::to_string(n) +
                        " must exceed query count " + std::to_string(cfg_.K));
    Tensor<S> x = queries_;
    for (const auto& b : blocks_) x = b.forward(x, image_feats);
    return out_proj_.forward(final_ln_.forward(x));
  }

  void collect(const std::string& prefix, ParamList<S>& out) {
    out.push_back({prefix + ".queries", queries_, true});
    for (size_t i = 0; i < blocks_.size(); ++i)
      blocks_[i].collect(prefix + ".block" + std::to_string(i), out);
    final_ln_.collect(prefix + ".final_ln", out);
    out_proj_.collect(prefix + ".out_proj", out);
  }

  const QFormerConfig& config() const { return cfg_; }
  Tensor<S>& query_tokens() { return queries_; }
  std::vector<QFormerBlock<S>>& blocks() { return blocks_; }

 private:
  QFormerConfig cfg_;
  Tensor<S> queries_;
  std::vector<QFormerBlock<S>> blocks_;
  LayerNormLayer<S> final_ln_;
  Linear<S> out_proj_;
};

}  // namespace medcap
