#pragma once

// Flat run configuration: one key=value namespace covering model, ablation,
// training, and decoding settings. Unknown keys are rejected so typos cannot
// silently fall back to defaults; the canonical JSON dump round-trips
// byte-identically and is embedded in every checkpoint for provenance.

#include <cstdint>
#include <filesystem>
#include <string>

#include "medcap/decode.hpp"
#include "medcap/model.hpp"
#include "medcap/train.hpp"

namespace medcap {

struct RunConfig {
  uint64_t seed = 7;

  // model
  int image_size = 56;
  int patch_size = 14;
  int d_v = 64;
  int vision_depth = 2;
  int vision_heads = 4;
  bool use_cls_token = true;
  int qformer_k = 8;
  int d_q = 64;
  int qformer_depth = 2;
  int qformer_heads = 4;
  int cross_attn_period = 2;
  int d_lm = 128;
  int lm_depth = 4;
  int lm_heads = 4;
  int soft_prompt_len = 4;
  int max_positions = 128;
  int mlp_ratio = 4;
  std::string prompt_text = "Question: What is the radiology report for this image? Answer:";

  // ablation
  bool vision_trainable = true;
  std::string lm_mode = "full";

  // training
  int batch_size = 8;
  int epochs = 10;
  double peak_lr = 1e-3;
  double weight_decay = 0.05;
  int warmup_steps = 50;
  int max_report_len = 24;
  double clip_norm = 1.0;
  int max_steps = 0;
  bool augment = true;
  // For the ablation grid only: when > 0, every row except the from-scratch
  // one starts from a shared base trained in full mode for this many steps
  // at the grid's larger image size, then fine-tunes under its own row
  // settings. 0 trains each row from scratch.
  int pretrain_steps = 0;

  // decoding
  int beam_size = 5;
  double repetition_penalty = 2.0;
  int min_len = 8;
  int max_len = 64;
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string canonical_json(const RunConfig& rc);

// vocab_size is filled in by the caller once the vocabulary is known.
ModelConfig model_config(const RunConfig& rc);
TrainConfig train_config(const RunConfig& rc);
DecodeConfig decode_config(const RunConfig& rc);
AblationSpec ablation_spec(const RunConfig& rc);

}  // namespace medcap
