#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

namespace medcap {

// Lowercase + whitespace split; the LM-side tokenizer.
std::vector<std::string> lm_tokenize(const std::string& text);

// Lowercase + split on non-alphanumeric runs; the metric-side tokenizer.
std::vector<std::string> metric_tokenize(const std::string& text);

// String <-> id bijection with four reserved ids ahead of the regular tokens.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kReserved = 4;

  Vocabulary();

  // Builds from a token set; regular tokens are sorted lexicographically.
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  // File format: one regular token per line; line i maps to id kReserved + i.
  static Vocabulary load(const std::filesystem::path& file);
  void save(const std::filesystem::path& file) const;

  int size() const { return static_cast<int>(id_to_token_.size()); }
  int id_of(const std::string& token) const;  // kUnk when absent
  const std::string& token_of(int id) const;
  bool contains(const std::string& token) const;

  std::vector<int> encode(const std::vector<std::string>& tokens) const;
  std::vector<int> encode_text(const std::string& text) const;
  // Space-joined regular tokens; reserved ids are dropped.
  std::string decode(const std::vector<int>& ids) const;

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
};

}  // namespace medcap
