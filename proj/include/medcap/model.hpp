#pragma once

// Full captioner: vision encoder -> query-token bridge -> language model.
// Ablation rows differ only in which components are trainable, the LM
// adaptation mode, and the input resolution; the bridge is always trainable.

#include <string>
#include <vector>

#include "medcap/lm.hpp"
#include "medcap/qformer.hpp"
#include "medcap/rng.hpp"
#include "medcap/vision.hpp"

namespace medcap {

enum class LmMode { kFrozen, kPtuning, kFull };

inline const char* lm_mode_name(LmMode mode) {
  switch (mode) {
    case LmMode::kFrozen: return "frozen";
    case LmMode::kPtuning: return "ptuning";
    case LmMode::kFull: return "full";
  }
  return "?";
}

inline LmMode parse_lm_mode(const std::string& name) {
  if (name == "frozen") return LmMode::kFrozen;
  if (name == "ptuning") return LmMode::kPtuning;
  if (name == "full") return LmMode::kFull;
  throw ConfigError("unknown lm_mode '" + name + "' (expected frozen|ptuning|full)");
}

struct AblationSpec {
  bool vision_trainable = true;
  LmMode lm_mode = LmMode::kFull;
  int image_size = 56;
};

struct ModelConfig {
  VisionConfig vision;
  QFormerConfig qformer;
  LMConfig lm;
};

// Soft prompts exist only in ptuning mode; frozen and full rows run the
// plain attention path.
inline ModelConfig apply_ablation(ModelConfig cfg, const AblationSpec& spec) {
  cfg.vision.image_size = spec.image_size;
  if (spec.lm_mode != LmMode::kPtuning) cfg.lm.soft_prompt_len = 0;
  return cfg;
}

struct ParamReport {
  long long vision = 0;
  long long qformer = 0;
  long long lm_base = 0;
  long long soft_prompts = 0;
  long long total = 0;
  long long vision_trainable = 0;
  long long qformer_trainable = 0;
  long long lm_base_trainable = 0;
  long long soft_prompts_trainable = 0;
  long long trainable = 0;
};

template <typename S>
class Captioner {
 public:
  Captioner(const ModelConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
    if (cfg.qformer.d_v != cfg.vision.d_v)
      throw ConfigError("qformer d_v must match vision d_v");
    if (cfg.qformer.d_lm != cfg.lm.d_lm)
      throw ConfigError("qformer d_lm must match lm d_lm");
    auto rng = make_rng(derive_seed(init_seed, "init"));
    vision_ = VisionEncoder<S>(cfg.vision, rng);
    qformer_ = QFormer<S>(cfg.qformer, rng);
    lm_ = LanguageModel<S>(cfg.lm, rng);
  }

  void apply_trainability(const AblationSpec& spec) {
    vision_.set_trainable(spec.vision_trainable);
    // The bridge (including query tokens and output projection) is always
    // trainable.
    switch (spec.lm_mode) {
      case LmMode::kFrozen:
        lm_.set_base_trainable(false);
        break;
      case LmMode::kPtuning:
        lm_.set_base_trainable(false);
        lm_.set_soft_trainable(true);
        break;
      case LmMode::kFull:
        lm_.set_base_trainable(true);
        break;
    }
  }

  Tensor<S> encode_prefix(const ImageTensor& img) const {
    return qformer_.bridge(vision_.forward(img));
  }

  // Same path but starting from an explicit patch tensor, so callers can
  // differentiate with respect to the image itself.
  Tensor<S> encode_prefix_from_patches(const Tensor<S>& patches) const {
    return qformer_.bridge(vision_.forward_patches(patches));
  }

  Tensor<S> forward_logits(const ImageTensor& img, const std::vector<int>& prompt_ids,
                           const std::vector<int>& target_ids) const {
    Tensor<S> prefix = encode_prefix(img);
    return lm_.forward_logits(&prefix, prompt_ids, target_ids);
  }

  ParamList<S> params() {
    ParamList<S> out;
    vision_.collect("vision", out);
    qformer_.collect("qformer", out);
    lm_.collect("lm", out);
    return out;
  }

  // Initializes this model from a shared pretrained base: copies every
  // parameter whose name and size match, and when the patch grids differ,
  // resamples the donor's positional table onto ours. Soft prompts (absent
  // from non-ptuning donors) keep their fresh initialization. Returns the
  // number of tensors copied.
  size_t adopt_base(Captioner& donor) {
    const VisionConfig& dv = donor.cfg_.vision;
    if (dv.d_v != cfg_.vision.d_v || dv.patch_size != cfg_.vision.patch_size ||
        dv.use_cls_token != cfg_.vision.use_cls_token)
      throw ConfigError("adopt_base: vision towers are not layout-compatible");
    ParamList<S> dst = params();
    ParamList<S> src = donor.params();
    const size_t copied = transplant_params(dst, src);
    const int src_side = dv.image_size / dv.patch_size;
    const int dst_side = cfg_.vision.image_size / cfg_.vision.patch_size;
    if (src_side != dst_side) {
      Tensor<S> resized = resize_pos_table(donor.vision_.pos_embedding(), src_side, dst_side,
                                           cfg_.vision.use_cls_token);
      vision_.pos_embedding().value() = resized.value();
    }
    return copied;
  }

  ParamReport param_report() {
    ParamReport r;
    ParamList<S> v, q, b, s;
    vision_.collect("vision", v);
    qformer_.collect("qformer", q);
    lm_.collect_base("lm", b);
    lm_.collect_soft("lm", s);
    r.vision = param_count(v);
    r.qformer = param_count(q);
    r.lm_base = param_count(b);
    r.soft_prompts = param_count(s);
    r.total = r.vision + r.qformer + r.lm_base + r.soft_prompts;
    r.vision_trainable = trainable_param_count(v);
    r.qformer_trainable = trainable_param_count(q);
    r.lm_base_trainable = trainable_param_count(b);
    r.soft_prompts_trainable = trainable_param_count(s);
    r.trainable = r.vision_trainable + r.qformer_trainable + r.lm_base_trainable +
                  r.soft_prompts_trainable;
    return r;
  }

  VisionEncoder<S>& vision() { return vision_; }
  QFormer<S>& bridge() { return qformer_; }
  LanguageModel<S>& lm() { return lm_; }
  const VisionEncoder<S>& vision() const { return vision_; }
  const QFormer<S>& bridge() const { return qformer_; }
  const LanguageModel<S>& lm() const { return lm_; }
  const ModelConfig& config() const { return cfg_; }

 private:
  ModelConfig cfg_;
  VisionEncoder<S> vision_;
  QFormer<S> qformer_;
  LanguageModel<S> lm_;
};

}  // namespace medcap
