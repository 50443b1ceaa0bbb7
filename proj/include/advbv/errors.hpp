#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace advbv {

// Precondition violated by the caller (bad shapes, empty input, n < N, ...).
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// NaN/Inf or a degenerate value reached a place that needs finite numbers.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Rejection sampler could not produce points at a usable rate.
class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class AttackError : public std::runtime_error {
 public:
  AttackError(const std::string& what, std::size_t iterate)
      : std::runtime_error(what + " (pgd iterate " + std::to_string(iterate) + ")"),
        iterate_(iterate) {}
  std::size_t iterate() const noexcept { return iterate_; }

 private:
  std::size_t iterate_;
};

class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, std::size_t epoch)
      : std::runtime_error(what + " (epoch " + std::to_string(epoch) + ")"), epoch_(epoch) {}
  std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t epoch_;
};

// Malformed sweep configuration; key() names the offending entry.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& key, const std::string& what)
      : std::runtime_error("config key '" + key + "': " + what), key_(key) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

class IoError : public std::runtime_error {
 public:
  IoError(const std::string& path, const std::string& what)
      : std::runtime_error(path + ": " + what), path_(path) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

}  // namespace advbv
