#include "medcap/decode.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "medcap/errors.hpp"

namespace medcap {

namespace {

constexpr double kMask = -1e9;

void validate(const DecodeConfig& cfg) {
  if (cfg.beam_size < 1) throw ConfigError("beam_size must be >= 1");
  if (cfg.repetition_penalty < 1.0) throw ConfigError("repetition_penalty must be >= 1");
  if (cfg.min_len < 1 || cfg.min_len > cfg.max_len)
    throw ConfigError("need 1 <= min_len <= max_len");
}

struct Candidate {
  double score;
  int parent;
  int token;
};

// Deterministic order: best score first, then earlier parent, then lower id.
bool candidate_less(const Candidate& a, const Candidate& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.parent != b.parent) return a.parent < b.parent;
  return a.token < b.token;
}

std::vector<double> constrained_log_probs(const StepFn& step_fn, const BeamHypothesis& hyp,
                                          const DecodeConfig& cfg) {
  std::vector<double> logits = step_fn(hyp.ids);
  if (logits.empty()) throw DecodeError("step function returned empty logits");
  apply_repetition_penalty(logits, hyp.ids, cfg.repetition_penalty);
  apply_min_length(logits, static_cast<int>(hyp.ids.size()), cfg.min_len, cfg.eos_id);
  if (*std::max_element(logits.begin(), logits.end()) <= kMask / 2)
    throw DecodeError("no admissible token: every logit is masked");
  return log_softmax(logits);
}

}  // namespace

void apply_repetition_penalty(std::vector<double>& logits, const std::vector<int>& history,
                              double p) {
  if (p == 1.0) return;
  std::unordered_set<int> seen(history.begin(), history.end());
  for (int id : seen) {
    if (id < 0 || static_cast<size_t>(id) >= logits.size()) continue;
    double& v = logits[static_cast<size_t>(id)];
    v = v > 0 ? v / p : v * p;
  }
}

void apply_min_length(std::vector<double>& logits, int current_len, int min_len, int eos_id) {
  if (current_len >= min_len) return;
  if (eos_id >= 0 && static_cast<size_t>(eos_id) < logits.size())
    logits[static_cast<size_t>(eos_id)] = kMask;
}

std::vector<double> log_softmax(const std::vector<double>& logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - m);
  const double lse = m + std::log(sum);
  std::vector<double> out(logits.size());
  for (size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

std::vector<BeamHypothesis> beam_search(const StepFn& step_fn, const DecodeConfig& cfg) {
  validate(cfg);
  std::vector<BeamHypothesis> live{BeamHypothesis{}};
  std::vector<BeamHypothesis> finished;
  const size_t beam = static_cast<size_t>(cfg.beam_size);

  auto sort_finished = [&] {
    std::sort(finished.begin(), finished.end(), [](const BeamHypothesis& a,
                                                   const BeamHypothesis& b) {
      if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
      return a.ids < b.ids;
    });
    if (finished.size() > beam) finished.resize(beam);
  };

  for (int t = 0; t < cfg.max_len && !live.empty(); ++t) {
    std::vector<Candidate> candidates;
    for (size_t i = 0; i < live.size(); ++i) {
      const std::vector<double> lp = constrained_log_probs(step_fn, live[i], cfg);
      // Top 2*beam proposals per hypothesis so EOS picks cannot starve the
      // beam of live continuations.
      std::vector<int> order(lp.size());
      for (size_t v = 0; v < lp.size(); ++v) order[v] = static_cast<int>(v);
      const size_t fan = std::min(order.size(), 2 * beam);
      std::partial_sort(order.begin(), order.begin() + static_cast<long>(fan), order.end(),
                        [&lp](int a, int b) {
                          if (lp[static_cast<size_t>(a)] != lp[static_cast<size_t>(b)])
                            return lp[static_cast<size_t>(a)] > lp[static_cast<size_t>(b)];
                          return a < b;
                        });
      for (size_t v = 0; v < fan; ++v)
        candidates.push_back({live[i].log_prob + lp[static_cast<size_t>(order[v])],
                              static_cast<int>(i), order[v]});
    }
    std::sort(candidates.begin(), candidates.end(), candidate_less);

    std::vector<BeamHypothesis> next_live;
    for (size_t rank = 0; rank < candidates.size(); ++rank) {
      const Candidate& c = candidates[rank];
      if (c.token == cfg.eos_id) {
        // EOS is honored only inside the top beam_size ranks; this keeps
        // beam_size=1 exactly equal to greedy decoding.
        if (rank < beam) {
          BeamHypothesis h = live[static_cast<size_t>(c.parent)];
          h.ids.push_back(c.token);
          h.log_prob = c.score;
          h.finished = true;
          finished.push_back(std::move(h));
        }
        continue;
      }
      if (next_live.size() < beam) {
        BeamHypothesis h = live[static_cast<size_t>(c.parent)];
        h.ids.push_back(c.token);
        h.log_prob = c.score;
        next_live.push_back(std::move(h));
      }
    }
    // Hypotheses that hit max_len are force-finished as they stand.
    live.clear();
    for (auto& h : next_live) {
      if (static_cast<int>(h.ids.size()) >= cfg.max_len)
        finished.push_back(std::move(h));
      else
        live.push_back(std::move(h));
    }
    sort_finished();
    if (finished.size() >= beam && !live.empty()) {
      double best_live = live[0].log_prob;
      for (const auto& h : live) best_live = std::max(best_live, h.log_prob);
      // Scores only decrease as tokens append, so the best live score bounds
      // every possible continuation.
      if (finished[beam - 1].log_prob >= best_live) break;
    }
  }
  for (auto& h : live) finished.push_back(std::move(h));
  sort_finished();
  if (finished.empty()) throw DecodeError("beam search produced no hypotheses");
  return finished;
}

BeamHypothesis greedy_decode(const StepFn& step_fn, const DecodeConfig& cfg) {
  validate(cfg);
  BeamHypothesis hyp;
  while (static_cast<int>(hyp.ids.size()) < cfg.max_len) {
    const std::vector<double> lp = constrained_log_probs(step_fn, hyp, cfg);
    int best = 0;
    for (size_t v = 1; v < lp.size(); ++v)
      if (lp[v] > lp[static_cast<size_t>(best)]) best = static_cast<int>(v);
    hyp.log_prob += lp[static_cast<size_t>(best)];
    hyp.ids.push_back(best);
    if (best == cfg.eos_id) {
      hyp.finished = true;
      break;
    }
  }
  return hyp;
}

}  // namespace medcap
