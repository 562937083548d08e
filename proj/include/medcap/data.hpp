#pragma once

// Procedural image-caption corpus: each sample is a deterministic function of
// (seed, index). Glyphs, grid positions, and the optional arrow marker drive
// a closed caption-template vocabulary; position phrases are invariant under
// horizontal flips so augmentation never invalidates a caption.

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "medcap/image.hpp"
#include "medcap/text.hpp"

namespace medcap {

struct SynthSpec {
  int count = 1000;
  int image_size = 112;  // stored resolution, must be divisible by 14
  uint64_t seed = 7;
  bool markers = true;  // draw the "white arrow" marker on ~half the samples
};

enum class Glyph { kCircle, kCross, kBar, kDot };

struct SampleAttributes {
  Glyph glyph;
  int row;  // 0..2 grid cell
  int col;  // 0..2
  bool marker;
};

const char* glyph_name(Glyph g);
std::string position_phrase(int row, int col);
std::string caption_for(const SampleAttributes& a);

struct SynthSample {
  ImageTensor image;
  std::string caption;
};

SampleAttributes sample_attributes(const SynthSpec& spec, int index);
SynthSample render_sample(const SynthSpec& spec, int index);

// Index-hash split: train/val/test by splitmix64(index) % 10 -> 8/1/1.
enum class Split { kTrain, kVal, kTest };
Split split_of_index(int index);
const char* split_name(Split s);

// Writes images/NNNNNN.pgm, {train,val,test}.tsv manifests
// (index<TAB>image_path<TAB>caption), {val,test}.refs.txt reference files,
// and vocab.txt covering all captions plus the prompt text.
void generate_corpus(const SynthSpec& spec, const std::filesystem::path& out_dir,
                     const std::string& prompt_text);

struct Sample {
  int index = 0;
  ImageTensor image;      // stored resolution; resized at model-input time
  std::string caption;
  std::vector<int> caption_ids;  // untruncated, no EOS
};

struct Dataset {
  Vocabulary vocab;
  std::vector<int> prompt_ids;
  std::vector<Sample> samples;
};

Dataset load_dataset(const std::filesystem::path& dir, Split split, const std::string& prompt_text);

// In-memory dataset straight from the generator (all indices, no split).
Dataset synth_dataset(const SynthSpec& spec, const std::string& prompt_text);

uint64_t vocab_hash(const Vocabulary& vocab);

// First min(len, max_report_len - 1) caption tokens, then EOS; total length
// never exceeds max_report_len.
std::vector<int> truncate_target(const std::vector<int>& caption_ids, int max_report_len);

struct PaddedBatch {
  std::vector<int> sample_pos;                    // positions into Dataset::samples
  std::vector<std::vector<int>> targets;          // padded with kPad to the batch max
  std::vector<std::vector<uint8_t>> target_mask;  // 1 = real token
};

std::vector<PaddedBatch> make_batches(const Dataset& data, int batch_size,
                                      std::mt19937_64& shuffle_rng, int max_report_len);

}  // namespace medcap
