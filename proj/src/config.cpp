#include "medcap/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "medcap/errors.hpp"

namespace medcap {

namespace {

using Json = nlohmann::ordered_json;

// Visits every field in canonical order; used by both the parser and the
// serializer so the two can never drift apart.
template <typename F>
void visit_fields(RunConfig& rc, F&& f) {
  f("seed", rc.seed);
  f("image_size", rc.image_size);
  f("patch_size", rc.patch_size);
  f("d_v", rc.d_v);
  f("vision_depth", rc.vision_depth);
  f("vision_heads", rc.vision_heads);
  f("use_cls_token", rc.use_cls_token);
  f("qformer_k", rc.qformer_k);
  f("d_q", rc.d_q);
  f("qformer_depth", rc.qformer_depth);
  f("qformer_heads", rc.qformer_heads);
  f("cross_attn_period", rc.cross_attn_period);
  f("d_lm", rc.d_lm);
  f("lm_depth", rc.lm_depth);
  f("lm_heads", rc.lm_heads);
  f("soft_prompt_len", rc.soft_prompt_len);
  f("max_positions", rc.max_positions);
  f("mlp_ratio", rc.mlp_ratio);
  f("prompt_text", rc.prompt_text);
  f("vision_trainable", rc.vision_trainable);
  f("lm_mode", rc.lm_mode);
  f("batch_size", rc.batch_size);
  f("epochs", rc.epochs);
  f("peak_lr", rc.peak_lr);
  f("weight_decay", rc.weight_decay);
  f("warmup_steps", rc.warmup_steps);
  f("max_report_len", rc.max_report_len);
  f("clip_norm", rc.clip_norm);
  f("max_steps", rc.max_steps);
  f("augment", rc.augment);
  f("pretrain_steps", rc.pretrain_steps);
  f("beam_size", rc.beam_size);
  f("repetition_penalty", rc.repetition_penalty);
  f("min_len", rc.min_len);
  f("max_len", rc.max_len);
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  Json j;
  try {
    j = Json::parse(json_text);
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig rc;
  std::set<std::string> known;
  visit_fields(rc, [&](const char* key, auto& field) {
    known.insert(key);
    auto it = j.find(key);
    if (it == j.end()) return;
    try {
      field = it->template get<std::decay_t<decltype(field)>>();
    } catch (const Json::exception&) {
      throw ConfigError(std::string("config key '") + key + "' has the wrong type");
    }
  });
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw ConfigError("unknown config key '" + key + "'");
  parse_lm_mode(rc.lm_mode);  // validates the value
  return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string canonical_json(const RunConfig& rc) {
  Json j;
  RunConfig copy = rc;
  visit_fields(copy, [&](const char* key, auto& field) { j[key] = field; });
  return j.dump(2) + "\n";
}

ModelConfig model_config(const RunConfig& rc) {
  ModelConfig mc;
  mc.vision.patch_size = rc.patch_size;
  mc.vision.d_v = rc.d_v;
  mc.vision.depth = rc.vision_depth;
  mc.vision.heads = rc.vision_heads;
  mc.vision.use_cls_token = rc.use_cls_token;
  mc.vision.image_size = rc.image_size;
  mc.vision.mlp_ratio = rc.mlp_ratio;
  mc.qformer.K = rc.qformer_k;
  mc.qformer.d_q = rc.d_q;
  mc.qformer.depth = rc.qformer_depth;
  mc.qformer.heads = rc.qformer_heads;
  mc.qformer.cross_attn_period = rc.cross_attn_period;
  mc.qformer.d_v = rc.d_v;
  mc.qformer.d_lm = rc.d_lm;
  mc.qformer.mlp_ratio = rc.mlp_ratio;
  mc.lm.d_lm = rc.d_lm;
  mc.lm.depth = rc.lm_depth;
  mc.lm.heads = rc.lm_heads;
  mc.lm.max_positions = rc.max_positions;
  mc.lm.prompt_text = rc.prompt_text;
  mc.lm.soft_prompt_len = rc.soft_prompt_len;
  mc.lm.mlp_ratio = rc.mlp_ratio;
  return mc;
}

TrainConfig train_config(const RunConfig& rc) {
  TrainConfig tc;
  tc.batch_size = rc.batch_size;
  tc.epochs = rc.epochs;
  tc.peak_lr = rc.peak_lr;
  tc.weight_decay = rc.weight_decay;
  tc.warmup_steps = rc.warmup_steps;
  tc.max_report_len = rc.max_report_len;
  tc.seed = rc.seed;
  tc.clip_norm = rc.clip_norm;
  tc.max_steps = rc.max_steps;
  tc.augment = rc.augment;
  return tc;
}

DecodeConfig decode_config(const RunConfig& rc) {
  DecodeConfig dc;
  dc.beam_size = rc.beam_size;
  dc.repetition_penalty = rc.repetition_penalty;
  dc.min_len = rc.min_len;
  dc.max_len = rc.max_len;
  return dc;
}

AblationSpec ablation_spec(const RunConfig& rc) {
  AblationSpec spec;
  spec.vision_trainable = rc.vision_trainable;
  spec.lm_mode = parse_lm_mode(rc.lm_mode);
  spec.image_size = rc.image_size;
  return spec;
}

}  // namespace medcap
