#pragma once

#include <stdexcept>
#include <string>

namespace medcap {

// Base for all project errors. Subclasses map to CLI exit codes:
// ConfigError -> 2, DataError -> 3, NumericError -> 4, anything else -> 1.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& msg) : Error(msg) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& msg) : Error(msg) {}
};

// Token id outside the vocabulary.
class VocabError : public DataError {
 public:
  explicit VocabError(const std::string& msg) : DataError(msg) {}
};

class TapeError : public Error {
 public:
  explicit TapeError(const std::string& msg) : Error(msg) {}
};

// NaN/Inf encountered where finite values are required.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

class DecodeError : public Error {
 public:
  explicit DecodeError(const std::string& msg) : Error(msg) {}
};

}  // namespace medcap
