#pragma once

#include <stdexcept>
#include <string>

namespace mtnet {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid or inconsistent configuration. `key_path` is the dotted config key
// (e.g. "train.lr") when one applies.
class ConfigError : public Error {
 public:
  ConfigError(std::string key_path, const std::string& what)
      : Error(key_path.empty() ? what : key_path + ": " + what),
        key_path_(std::move(key_path)) {}

  const std::string& key_path() const { return key_path_; }

 private:
  std::string key_path_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent input data (bad ids, unsorted trajectories, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Non-finite values detected during optimization.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace mtnet
