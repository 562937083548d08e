#pragma once

// Shared building blocks: parameter bookkeeping, linear/layernorm/MLP layers
// and multi-head attention. Attention optionally takes per-layer soft prompts
// whose rows are prepended to the key and value sequences of every head.

#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "medcap/rng.hpp"
#include "medcap/tensor.hpp"

namespace medcap {

template <typename S>
struct NamedParam {
  std::string name;
  Tensor<S> tensor;
  bool decay = true;  // biases and norm parameters opt out of weight decay
};

template <typename S>
using ParamList = std::vector<NamedParam<S>>;

template <typename S>
Tensor<S> normal_init(std::vector<int> shape, S stddev, std::mt19937_64& rng) {
  Tensor<S> t = Tensor<S>::zeros(std::move(shape));
  std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
  for (auto& v : t.value()) v = static_cast<S>(dist(rng));
  return t;
}

template <typename S>
long long param_count(const ParamList<S>& params) {
  long long n = 0;
  for (const auto& p : params) n += static_cast<long long>(p.tensor.numel());
  return n;
}

template <typename S>
long long trainable_param_count(const ParamList<S>& params) {
  long long n = 0;
  for (const auto& p : params)
    if (p.tensor.trainable()) n += static_cast<long long>(p.tensor.numel());
  return n;
}

template <typename S>
void set_trainable(ParamList<S>& params, bool flag) {
  for (auto& p : params) p.tensor.set_trainable(flag);
}

// Copies values from src into every dst entry whose name and element count
// both match; everything else (fresh soft prompts, differently-sized tables)
// keeps its current values. Returns how many tensors were copied.
template <typename S>
size_t transplant_params(ParamList<S>& dst, const ParamList<S>& src) {
  size_t copied = 0;
  for (auto& d : dst)
    for (const auto& s : src) {
      if (s.name != d.name || s.tensor.numel() != d.tensor.numel()) continue;
      d.tensor.value() = s.tensor.value();
      ++copied;
      break;
    }
  return copied;
}

template <typename S>
class Linear {
 public:
  Linear() = default;
  Linear(int in, int out, std::mt19937_64& rng, S stddev = S(0.02), bool zero_init = false) {
    w_ = zero_init ? Tensor<S>::zeros({in, out}) : normal_init<S>({in, out}, stddev, rng);
    b_ = Tensor<S>::zeros({out});
    w_.set_trainable(true);
    b_.set_trainable(true);
  }

  Tensor<S> forward(const Tensor<S>& x) const { return add_bias(matmul(x, w_), b_); }

  void collect(const std::string& prefix, ParamList<S>& out) {
    out.push_back({prefix + ".weight", w_, true});
    out.push_back({prefix + ".bias", b_, false});
  }

  Tensor<S>& weight() { return w_; }
  Tensor<S>& bias() { return b_; }

 private:
  Tensor<S> w_, b_;
};

template <typename S>
class LayerNormLayer {
 public:
  LayerNormLayer() = default;
  explicit LayerNormLayer(int dim, S eps = S(1e-5)) : eps_(eps) {
    gain_ = Tensor<S>::full({dim}, S(1));
    bias_ = Tensor<S>::zeros({dim});
    gain_.set_trainable(true);
    bias_.set_trainable(true);
  }

  Tensor<S> forward(const Tensor<S>& x) const { return layer_norm(x, gain_, bias_, eps_); }

  void collect(const std::string& prefix, ParamList<S>& out) {
    out.push_back({prefix + ".gain", gain_, false});
    out.push_back({prefix + ".bias", bias_, false});
  }

  Tensor<S>& gain() { return gain_; }
  Tensor<S>& bias() { return bias_; }

 private:
  Tensor<S> gain_, bias_;
  S eps_ = S(1e-5);
};

template <typename S>
class Mlp {
 public:
  Mlp() = default;
  Mlp(int dim, int hidden, std::mt19937_64& rng)
      : fc1_(dim, hidden, rng), fc2_(hidden, dim, rng) {}

  Tensor<S> forward(const Tensor<S>& x) const { return fc2_.forward(gelu(fc1_.forward(x))); }

  void collect(const std::string& prefix, ParamList<S>& out) {
    fc1_.collect(prefix + ".fc1", out);
    fc2_.collect(prefix + ".fc2", out);
  }

 private:
  Linear<S> fc1_, fc2_;
};

// Multi-head attention. Queries come from q_input (width d_model), keys and
// values from kv_input (width d_kv). When prompt_k/prompt_v are given, their
// per-head slices are prepended to the key/value sequences (P-tuning); the
// mask, when present, must already cover the prompt columns.
template <typename S>
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(int d_model, int d_kv, int heads, std::mt19937_64& rng,
                     bool zero_init_out = false)
      : d_model_(d_model), heads_(heads) {
    if (d_model % heads != 0)
      throw ConfigError("attention: width " + std::to_string(d_model) +
                        " not divisible by heads " + std::to_string(heads));
    wq_ = Linear<S>(d_model, d_model, rng);
    wk_ = Linear<S>(d_kv, d_model, rng);
    wv_ = Linear<S>(d_kv, d_model, rng);
    wo_ = Linear<S>(d_model, d_model, rng, S(0.02), zero_init_out);
  }

  Tensor<S> forward(const Tensor<S>& q_input, const Tensor<S>& kv_input,
                    const AttnMask* mask = nullptr, const Tensor<S>* prompt_k = nullptr,
                    const Tensor<S>* prompt_v = nullptr) const {
    const Tensor<S> q = wq_.forward(q_input);
    const Tensor<S> k = wk_.forward(kv_input);
    const Tensor<S> v = wv_.forward(kv_input);
    const int dk = d_model_ / heads_;
    const S inv_sqrt_dk = S(1) / static_cast<S>(std::sqrt(static_cast<double>(dk)));
    std::vector<Tensor<S>> head_outs;
    head_outs.reserve(static_cast<std::size_t>(heads_));
    for (int h = 0; h < heads_; ++h) {
      Tensor<S> qh = slice(q, 1, h * dk, dk);
      Tensor<S> kh = slice(k, 1, h * dk, dk);
      Tensor<S> vh = slice(v, 1, h * dk, dk);
      if (prompt_k) {
        kh = concat<S>({slice(*prompt_k, 1, h * dk, dk), kh}, 0);
        vh = concat<S>({slice(*prompt_v, 1, h * dk, dk), vh}, 0);
      }
      Tensor<S> scores = scale(matmul(qh, transpose(kh)), inv_sqrt_dk);
      if (mask) scores = mask_fill(scores, *mask, kMaskNeg<S>);
      head_outs.push_back(matmul(softmax_rows(scores), vh));
    }
    return wo_.forward(concat(head_outs, 1));
  }

  void collect(const std::string& prefix, ParamList<S>& out) {
    wq_.collect(prefix + ".wq", out);
    wk_.collect(prefix + ".wk", out);
    wv_.collect(prefix + ".wv", out);
    wo_.collect(prefix + ".wo", out);
  }

  int heads() const { return heads_; }
  Linear<S>& out_proj() { return wo_; }
  Linear<S>& q_proj() { return wq_; }
  Linear<S>& k_proj() { return wk_; }
  Linear<S>& v_proj() { return wv_; }

 private:
  int d_model_ = 0;
  int heads_ = 1;
  Linear<S> wq_, wk_, wv_, wo_;
};

}  // namespace medcap
