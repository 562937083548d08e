#pragma once

// Checkpoint container: magic "QBCK", u32 version, then repeated records of
// (name_len u32, name bytes, rank u32, dims u32 x rank, payload f32 x numel),
// all little-endian. Parameter records come first, then optimizer-state
// records ("opt.m.<name>", "opt.v.<name>", "opt.step"), then provenance
// ("meta.run_config_utf8", "meta.vocab_hash") with bytes stored one per
// float so the record grammar stays uniform.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "medcap/train.hpp"

namespace medcap {

struct CheckpointTensor {
  std::vector<uint32_t> dims;
  std::vector<float> data;
};

struct Checkpoint {
  std::vector<std::pair<std::string, CheckpointTensor>> records;

  const CheckpointTensor* find(const std::string& name) const;
  bool has(const std::string& name) const { return find(name) != nullptr; }
  std::string run_config() const;  // "" when absent
  uint64_t vocab_hash() const;     // 0 when absent
};

void save_checkpoint(const std::filesystem::path& path, const ParamList<float>& params,
                     const AdamW<float>* opt, const std::string& run_config_json,
                     uint64_t vocab_hash);

Checkpoint load_checkpoint(const std::filesystem::path& path);

// Copies matching records back into the parameter tensors; missing record or
// shape mismatch raises DataError.
void restore_params(ParamList<float>& params, const Checkpoint& ckpt);

}  // namespace medcap
