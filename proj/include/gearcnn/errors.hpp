#ifndef GEARCNN_ERRORS_HPP
#define GEARCNN_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace gearcnn {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or hyperparameter mismatch detected while configuring or running a layer.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  enum class Kind { NotACheckpoint, VersionMismatch, Truncated, Integrity, Io };

  CheckpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

class TransplantError : public Error {
 public:
  using Error::Error;
};

// Malformed or insufficient input data (signals, tach pulses, corpora).
class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace gearcnn

#endif  // GEARCNN_ERRORS_HPP
