#include "medcap/metrics.hpp"

#include <algorithm>
#include <map>
#include <unordered_map>

#include "medcap/errors.hpp"
#include "medcap/text.hpp"

namespace medcap {

ScoredPair rouge1(const std::string& candidate, const std::string& reference) {
  const std::vector<std::string> cand = metric_tokenize(candidate);
  const std::vector<std::string> ref = metric_tokenize(reference);
  ScoredPair s;
  if (cand.empty() || ref.empty()) return s;
  std::unordered_map<std::string, long long> ref_counts;
  for (const auto& t : ref) ++ref_counts[t];
  long long overlap = 0;
  std::unordered_map<std::string, long long> used;
  for (const auto& t : cand) {
    auto it = ref_counts.find(t);
    if (it != ref_counts.end() && used[t] < it->second) {
      ++used[t];
      ++overlap;
    }
  }
  s.precision = static_cast<double>(overlap) / static_cast<double>(cand.size());
  s.recall = static_cast<double>(overlap) / static_cast<double>(ref.size());
  s.f1 = (s.precision + s.recall) > 0
             ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
             : 0.0;
  return s;
}

CorpusSummary corpus_rouge1(const std::vector<std::pair<std::string, std::string>>& pairs) {
  if (pairs.empty()) throw DataError("cannot score an empty corpus");
  CorpusSummary out;
  for (const auto& [cand, ref] : pairs) {
    const ScoredPair s = rouge1(cand, ref);
    out.mean_precision += s.precision;
    out.mean_recall += s.recall;
    out.mean_f1 += s.f1;
  }
  out.count = static_cast<int>(pairs.size());
  out.mean_precision /= out.count;
  out.mean_recall /= out.count;
  out.mean_f1 /= out.count;
  return out;
}

std::vector<std::pair<std::string, long long>> token_frequency_report(
    const std::vector<std::string>& texts, int top_n) {
  if (top_n < 1) throw ConfigError("top_n must be >= 1");
  std::map<std::string, long long> counts;
  for (const auto& text : texts)
    for (const auto& t : metric_tokenize(text)) ++counts[t];
  std::vector<std::pair<std::string, long long>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (ranked.size() > static_cast<size_t>(top_n)) ranked.resize(static_cast<size_t>(top_n));
  return ranked;
}

}  // namespace medcap
