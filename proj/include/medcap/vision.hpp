#pragma once

// Patch-based image encoder: linear patch projection + learned positional
// embeddings + optional CLS token, followed by pre-norm Transformer blocks.

#include <algorithm>
#include <string>
#include <vector>

#include "medcap/errors.hpp"
#include "medcap/image.hpp"
#include "medcap/nn.hpp"

namespace medcap {

struct VisionConfig {
  int patch_size = 14;
  int d_v = 64;
  int depth = 2;
  int heads = 4;
  bool use_cls_token = true;
  int image_size = 56;  // square input resolution after preprocessing
  int channels = 1;
  int mlp_ratio = 4;
};

// Sequence-length law: N = (H/ps)*(W/ps) + [cls].
inline int vision_seq_len(const VisionConfig& cfg, int height, int width) {
  if (height % cfg.patch_size != 0 || width % cfg.patch_size != 0)
    throw DataError("image " + std::to_string(height) + "x" + std::to_string(width) +
                    " not divisible by patch size " + std::to_string(cfg.patch_size));
  const int patches = (height / cfg.patch_size) * (width / cfg.patch_size);
  return patches + (cfg.use_cls_token ? 1 : 0);
}

inline int vision_seq_len(const VisionConfig& cfg) {
  return vision_seq_len(cfg, cfg.image_size, cfg.image_size);
}

// Non-overlapping patches in raster order, each flattened row-major
// (pixel rows, then columns, channels innermost).
template <typename S>
Tensor<S> patchify(const ImageTensor& img, const VisionConfig& cfg) {
  const int ps = cfg.patch_size;
  if (img.height % ps != 0 || img.width % ps != 0)
    throw DataError("image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                    " not divisible by patch size " + std::to_string(ps));
  const int rows = img.height / ps;
  const int cols = img.width / ps;
  const int dim = ps * ps * img.channels;
  Tensor<S> out = Tensor<S>::zeros({rows * cols, dim});
  auto& v = out.value();
  for (int pr = 0; pr < rows; ++pr)
    for (int pc = 0; pc < cols; ++pc) {
      const size_t base = static_cast<size_t>(pr * cols + pc) * dim;
      size_t k = 0;
      for (int r = 0; r < ps; ++r)
        for (int c = 0; c < ps; ++c)
          for (int ch = 0; ch < img.channels; ++ch)
            v[base + k++] = static_cast<S>(img.at(pr * ps + r, pc * ps + c, ch));
    }
  return out;
}

// Resamples a learned positional table onto a different patch grid by
// bilinear interpolation over the 2-D grid (corner-aligned); the CLS row,
// when present, is carried over unchanged. This is the usual way to run a
// patch encoder at a resolution it was not trained at.
template <typename S>
Tensor<S> resize_pos_table(const Tensor<S>& src, int src_side, int dst_side, bool cls_row) {
  const int cls = cls_row ? 1 : 0;
  const int d = static_cast<int>(src.shape()[1]);
  if (src.shape()[0] != src_side * src_side + cls)
    throw ShapeError("pos table has " + std::to_string(src.shape()[0]) + " rows, expected " +
                     std::to_string(src_side * src_side + cls));
  Tensor<S> out = Tensor<S>::zeros({dst_side * dst_side + cls, d});
  const auto& sv = src.value();
  auto& ov = out.value();
  for (int k = 0; k < cls * d; ++k) ov[k] = sv[k];
  const auto coord = [&](int i) {
    return dst_side == 1 ? 0.0 : static_cast<double>(i) * (src_side - 1) / (dst_side - 1);
  };
  for (int r = 0; r < dst_side; ++r) {
    const double sr = coord(r);
    const int r0 = static_cast<int>(sr);
    const int r1 = std::min(r0 + 1, src_side - 1);
    const double fr = sr - r0;
    for (int c = 0; c < dst_side; ++c) {
      const double sc = coord(c);
      const int c0 = static_cast<int>(sc);
      const int c1 = std::min(c0 + 1, src_side - 1);
      const double fc = sc - c0;
      const size_t o = static_cast<size_t>(cls + r * dst_side + c) * d;
      const size_t a = static_cast<size_t>(cls + r0 * src_side + c0) * d;
      const size_t b = static_cast<size_t>(cls + r0 * src_side + c1) * d;
      const size_t e = static_cast<size_t>(cls + r1 * src_side + c0) * d;
      const size_t f = static_cast<size_t>(cls + r1 * src_side + c1) * d;
      for (int k = 0; k < d; ++k) {
        const double top = (1.0 - fc) * sv[a + k] + fc * sv[b + k];
        const double bot = (1.0 - fc) * sv[e + k] + fc * sv[f + k];
        ov[o + k] = static_cast<S>((1.0 - fr) * top + fr * bot);
      }
    }
  }
  out.set_trainable(src.trainable());
  return out;
}

template <typename S>
class VisionBlock {
 public:
  VisionBlock() = default;
  VisionBlock(const VisionConfig& cfg, std::mt19937_64& rng)
      : ln1_(cfg.d_v),
        attn_(cfg.d_v, cfg.d_v, cfg.heads, rng),
        ln2_(cfg.d_v),
        mlp_(cfg.d_v, cfg.d_v * cfg.mlp_ratio, rng) {}

  Tensor<S> forward(const Tensor<S>& x) const {
    Tensor<S> h = ln1_.forward(x);
    Tensor<S> y = add(x, attn_.forward(h, h));
    return add(y, mlp_.forward(ln2_.forward(y)));
  }

  void collect(const std::string& prefix, ParamList<S>& out) {
    ln1_.collect(prefix + ".ln1", out);
    attn_.collect(prefix + ".attn", out);
    ln2_.collect(prefix + ".ln2", out);
    mlp_.collect(prefix + ".mlp", out);
  }

 private:
  LayerNormLayer<S> ln1_;
  MultiHeadAttention<S> attn_;
  LayerNormLayer<S> ln2_;
  Mlp<S> mlp_;
};

template <typename S>
class VisionEncoder {
 public:
  VisionEncoder() = default;
  VisionEncoder(const VisionConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
    if (cfg.d_v % cfg.heads != 0) throw ConfigError("vision: d_v not divisible by heads");
    if (cfg.image_size % cfg.patch_size != 0)
      throw ConfigError("vision: image size " + std::to_string(cfg.image_size) +
                        " not divisible by patch size " + std::to_string(cfg.patch_size));
    const int patch_dim = cfg.patch_size * cfg.patch_size * cfg.channels;
    const int n = vision_seq_len(cfg);
    proj_ = Linear<S>(patch_dim, cfg.d_v, rng);
    if (cfg.use_cls_token) {
      cls_ = normal_init<S>({1, cfg.d_v}, S(0.02), rng);
      cls_.set_trainable(true);
    }
    pos_ = normal_init<S>({n, cfg.d_v}, S(0.02), rng);
    pos_.set_trainable(true);
    blocks_.reserve(static_cast<size_t>(cfg.depth));
    for (int i = 0; i < cfg.depth; ++i) blocks_.emplace_back(cfg, rng);
    final_ln_ = LayerNormLayer<S>(cfg.d_v);
  }

  // patches: P x (patch_size^2 * channels). Returns N x d_v.
  Tensor<S> forward_patches(const Tensor<S>& patches) const {
    Tensor<S> x = proj_.forward(patches);
    if (cfg_.use_cls_token) x = concat<S>({cls_, x}, 0);
    if (x.shape()[0] != pos_.shape()[0])
      throw ShapeError("vision: got " + std::to_string(x.shape()[0]) + " tokens, expected " +
                       std::to_string(pos_.shape()[0]) + " (resize the image first)");
    x = add(x, pos_);
    for (const auto& b : blocks_) x = b.forward(x);
    return final_ln_.forward(x);
  }

  Tensor<S> forward(const ImageTensor& img) const {
    return forward_patches(patchify<S>(img, cfg_));
  }

  void collect(const std::string& prefix, ParamList<S>& out) {
    proj_.collect(prefix + ".proj", out);
    if (cfg_.use_cls_token) out.push_back({prefix + ".cls", cls_, true});
    out.push_back({prefix + ".pos", pos_, true});
    for (size_t i = 0; i < blocks_.size(); ++i)
      blocks_[i].collect(prefix + ".block" + std::to_string(i), out);
    final_ln_.collect(prefix + ".final_ln", out);
  }

  void set_trainable(bool flag) {
    ParamList<S> params;
    collect("vision", params);
    medcap::set_trainable(params, flag);
  }

  const VisionConfig& config() const { return cfg_; }
  Tensor<S>& pos_embedding() { return pos_; }
  Linear<S>& patch_proj() { return proj_; }

 private:
  VisionConfig cfg_;
  Linear<S> proj_;
  Tensor<S> cls_;
  Tensor<S> pos_;
  std::vector<VisionBlock<S>> blocks_;
  LayerNormLayer<S> final_ln_;
};

}  // namespace medcap
