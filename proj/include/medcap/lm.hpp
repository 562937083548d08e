#pragma once

// Decoder-only Transformer over [visual prefix | prompt tokens | target
// tokens] with a causal mask. Optional per-layer soft prompts (P_K, P_V) are
// prepended to every self-attention layer's keys and values; every query may
// attend to them, so they act as trainable context while the base weights
// stay frozen.

#include <string>
#include <vector>

#include "medcap/errors.hpp"
#include "medcap/nn.hpp"
#include "medcap/text.hpp"

namespace medcap {

struct LMConfig {
  int d_lm = 128;
  int depth = 4;
  int heads = 4;
  int vocab_size = 0;
  int max_positions = 128;
  std::string prompt_text = "Question: What is the radiology report for this image? Answer:";
  int soft_prompt_len = 4;  // 0 disables the soft-prompt path entirely
  int mlp_ratio = 4;
};

inline long long count_ptuning_params(long long depth, long long soft_prompt_len, long long d_lm) {
  if (depth < 0 || soft_prompt_len < 0 || d_lm < 0)
    throw ConfigError("ptuning parameter counts must be non-negative");
  return depth * 2 * soft_prompt_len * d_lm;
}

template <typename S>
struct SoftPromptLayer {
  Tensor<S> pk, pv;  // each soft_prompt_len x d_lm, split per head at use
};

// Causal mask for a length-S sequence whose keys are prefixed by
// `prompt_cols` soft-prompt positions: query i sees all soft-prompt columns
// plus real columns j <= i.
inline AttnMask causal_mask(int seq_len, int prompt_cols) {
  AttnMask m = AttnMask::none(seq_len, prompt_cols + seq_len);
  for (int i = 0; i < seq_len; ++i)
    for (int j = i + 1; j < seq_len; ++j) m.set(i, prompt_cols + j, true);
  return m;
}

template <typename S>
class LMBlock {
 public:
  LMBlock() = default;
  LMBlock(const LMConfig& cfg, std::mt19937_64& rng)
      : ln1_(cfg.d_lm),
        attn_(cfg.d_lm, cfg.d_lm, cfg.heads, rng),
        ln2_(cfg.d_lm),
        mlp_(cfg.d_lm, cfg.d_lm * cfg.mlp_ratio, rng) {}

  Tensor<S> forward(const Tensor<S>& x, const AttnMask& mask,
                    const SoftPromptLayer<S>* soft) const {
    Tensor<S> h = ln1_.forward(x);
    Tensor<S> a = soft ? attn_.forward(h, h, &mask, &soft->pk, &soft->pv)
                       : attn_.forward(h, h, &mask);
    Tensor<S> y = add(x, a);
    return add(y, mlp_.forward(ln2_.forward(y)));
  }

  void collect(const std::string& prefix, ParamList<S>& out) {
    ln1_.collect(prefix + ".ln1", out);
    attn_.collect(prefix + ".attn", out);
    ln2_.collect(prefix + ".ln2", out);
    mlp_.collect(prefix + ".mlp", out);
  }

  MultiHeadAttention<S>& attn() { return attn_; }

 private:
  LayerNormLayer<S> ln1_;
  MultiHeadAttention<S> attn_;
  LayerNormLayer<S> ln2_;
  Mlp<S> mlp_;
};

template <typename S>
class LanguageModel {
 public:
  LanguageModel() = default;
  LanguageModel(const LMConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
    if (cfg.d_lm % cfg.heads != 0) throw ConfigError("lm: d_lm not divisible by heads");
    if (cfg.vocab_size <= 0) throw ConfigError("lm: vocab_size must be positive");
    tok_emb_ = normal_init<S>({cfg.vocab_size, cfg.d_lm}, S(0.02), rng);
    tok_emb_.set_trainable(true);
    pos_emb_ = normal_init<S>({cfg.max_positions, cfg.d_lm}, S(0.02), rng);
    pos_emb_.set_trainable(true);
    blocks_.reserve(static_cast<size_t>(cfg.depth));
    for (int i = 0; i < cfg.depth; ++i) blocks_.emplace_back(cfg, rng);
    final_ln_ = LayerNormLayer<S>(cfg.d_lm);
    lm_head_ = Linear<S>(cfg.d_lm, cfg.vocab_size, rng);
    for (int i = 0; i < cfg.depth; ++i) {
      SoftPromptLayer<S> layer;
      if (cfg.soft_prompt_len > 0) {
        layer.pk = normal_init<S>({cfg.soft_prompt_len, cfg.d_lm}, S(0.02), rng);
        layer.pv = normal_init<S>({cfg.soft_prompt_len, cfg.d_lm}, S(0.02), rng);
        layer.pk.set_trainable(true);
        layer.pv.set_trainable(true);
      }
      soft_.push_back(layer);
    }
  }

  // input_token_ids is the already-shifted decoder input (BOS first).
  // Returns hidden states for the full [prefix | prompt | input] sequence.
  Tensor<S> hidden_states(const Tensor<S>* visual_prefix, const std::vector<int>& prompt_ids,
                          const std::vector<int>& input_token_ids) const {
    const int k = visual_prefix ? visual_prefix->shape()[0] : 0;
    const int m = static_cast<int>(prompt_ids.size());
    const int t = static_cast<int>(input_token_ids.size());
    if (t < 1) throw ShapeError("lm: empty target segment");
    if (k + m + t > cfg_.max_positions)
      throw ShapeError("lm: sequence overflow: prefix " + std::to_string(k) + " + prompt " +
                       std::to_string(m) + " + target " + std::to_string(t) +
                       " exceeds max_positions " + std::to_string(cfg_.max_positions));
    std::vector<Tensor<S>> rows;
    if (k > 0) rows.push_back(*visual_prefix);
    if (m > 0) rows.push_back(embedding_lookup(tok_emb_, prompt_ids));
    rows.push_back(embedding_lookup(tok_emb_, input_token_ids));
    Tensor<S> x = rows.size() == 1 ? rows[0] : concat(rows, 0);
    const int s = k + m + t;
    x = add(x, slice(pos_emb_, 0, 0, s));
    const AttnMask mask = causal_mask(s, cfg_.soft_prompt_len);
    for (int i = 0; i < cfg_.depth; ++i)
      x = blocks_[static_cast<size_t>(i)].forward(
          x, mask, cfg_.soft_prompt_len > 0 ? &soft_[static_cast<size_t>(i)] : nullptr);
    return final_ln_.forward(x);
  }

  // Next-token logits at each target position: row t predicts target_ids[t]
  // from (prefix, prompt, BOS, target_ids[0..t-1]). Returns T x vocab_size.
  Tensor<S> forward_logits(const Tensor<S>* visual_prefix, const std::vector<int>& prompt_ids,
                           const std::vector<int>& target_ids) const {
    if (target_ids.empty()) throw ShapeError("lm: empty target sequence");
    std::vector<int> input;
    input.reserve(target_ids.size());
    input.push_back(Vocabulary::kBos);
    input.insert(input.end(), target_ids.begin(), target_ids.end() - 1);
    const int k = visual_prefix ? visual_prefix->shape()[0] : 0;
    const int m = static_cast<int>(prompt_ids.size());
    Tensor<S> h = hidden_states(visual_prefix, prompt_ids, input);
    Tensor<S> at_targets = slice(h, 0, k + m, static_cast<int>(target_ids.size()));
    return lm_head_.forward(at_targets);
  }

  // Logits for the token following `generated` (which excludes BOS). 1 x V.
  Tensor<S> next_token_logits(const Tensor<S>* visual_prefix, const std::vector<int>& prompt_ids,
                              const std::vector<int>& generated) const {
    std::vector<int> input;
    input.reserve(generated.size() + 1);
    input.push_back(Vocabulary::kBos);
    input.insert(input.end(), generated.begin(), generated.end());
    Tensor<S> h = hidden_states(visual_prefix, prompt_ids, input);
    Tensor<S> last = slice(h, 0, h.shape()[0] - 1, 1);
    return lm_head_.forward(last);
  }

  void collect_base(const std::string& prefix, ParamList<S>& out) {
    out.push_back({prefix + ".tok_emb", tok_emb_, true});
    out.push_back({prefix + ".pos_emb", pos_emb_, true});
    for (size_t i = 0; i < blocks_.size(); ++i)
      blocks_[i].collect(prefix + ".block" + std::to_string(i), out);
    final_ln_.collect(prefix + ".final_ln", out);
    lm_head_.collect(prefix + ".head", out);
  }

  void collect_soft(const std::string& prefix, ParamList<S>& out) {
    if (cfg_.soft_prompt_len == 0) return;
    for (size_t i = 0; i < soft_.size(); ++i) {
      out.push_back({prefix + ".soft" + std::to_string(i) + ".pk", soft_[i].pk, true});
      out.push_back({prefix + ".soft" + std::to_string(i) + ".pv", soft_[i].pv, true});
    }
  }

  void collect(const std::string& prefix, ParamList<S>& out) {
    collect_base(prefix, out);
    collect_soft(prefix, out);
  }

  void set_base_trainable(bool flag) {
    ParamList<S> params;
    collect_base("lm", params);
    medcap::set_trainable(params, flag);
  }

  void set_soft_trainable(bool flag) {
    ParamList<S> params;
    collect_soft("lm", params);
    medcap::set_trainable(params, flag);
  }

  const LMConfig& config() const { return cfg_; }
  Tensor<S>& token_embedding() { return tok_emb_; }
  std::vector<SoftPromptLayer<S>>& soft_prompts() { return soft_; }
  std::vector<LMBlock<S>>& blocks() { return blocks_; }

 private:
  LMConfig cfg_;
  Tensor<S> tok_emb_, pos_emb_;
  std::vector<LMBlock<S>> blocks_;
  LayerNormLayer<S> final_ln_;
  Linear<S> lm_head_;
  std::vector<SoftPromptLayer<S>> soft_;
};

}  // namespace medcap
