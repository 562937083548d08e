#pragma once

// Unigram-overlap scoring: clipped multiset overlap between candidate and
// reference tokens (lowercased, split on non-alphanumeric runs), reported as
// precision/recall/F1, plus a corpus-level mean and a token-frequency report.

#include <string>
#include <utility>
#include <vector>

namespace medcap {

struct ScoredPair {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

ScoredPair rouge1(const std::string& candidate, const std::string& reference);

struct CorpusSummary {
  double mean_precision = 0.0;
  double mean_recall = 0.0;
  double mean_f1 = 0.0;
  int count = 0;
};

// pairs are (candidate, reference); empty list raises DataError.
CorpusSummary corpus_rouge1(const std::vector<std::pair<std::string, std::string>>& pairs);

// Descending by count, ties broken lexicographically.
std::vector<std::pair<std::string, long long>> token_frequency_report(
    const std::vector<std::string>& texts, int top_n);

}  // namespace medcap
