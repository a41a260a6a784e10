#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace metastruct {

// Every failure raised by the library derives from Error so callers can map
// the whole family onto exit codes in one place.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class GenerationFailure : public Error {
 public:
  using Error::Error;
};

class UndefinedMetric : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Invalid or out-of-range experiment configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& what, std::size_t epoch)
      : Error(what + " (epoch " + std::to_string(epoch) + ")"), epoch_(epoch) {}

  std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t epoch_;
};

}  // namespace metastruct
