#pragma once

// Constrained beam search over a next-token callback. The callback receives
// the tokens generated so far (no BOS, no prefix/prompt) and returns raw
// logits; penalties and the min-length constraint are applied here, before
// the log-softmax. No length normalization; ties break toward the lower
// token id so decoding is fully deterministic.

#include <functional>
#include <vector>

namespace medcap {

struct DecodeConfig {
  int beam_size = 5;
  double repetition_penalty = 2.0;
  int min_len = 8;
  int max_len = 64;
  int eos_id = 2;
};

struct BeamHypothesis {
  std::vector<int> ids;  // includes the terminal EOS when finished
  double log_prob = 0.0;
  bool finished = false;  // true iff terminated by EOS (not force-finished)
};

using StepFn = std::function<std::vector<double>(const std::vector<int>& generated)>;

// CTRL-style: positive logits of seen tokens divide by p, negative multiply.
void apply_repetition_penalty(std::vector<double>& logits, const std::vector<int>& history,
                              double p);

// Masks the EOS logit to -1e9 while fewer than min_len tokens are generated.
void apply_min_length(std::vector<double>& logits, int current_len, int min_len, int eos_id);

std::vector<double> log_softmax(const std::vector<double>& logits);

// Returns up to beam_size hypotheses sorted by score descending.
std::vector<BeamHypothesis> beam_search(const StepFn& step_fn, const DecodeConfig& cfg);

BeamHypothesis greedy_decode(const StepFn& step_fn, const DecodeConfig& cfg);

}  // namespace medcap
