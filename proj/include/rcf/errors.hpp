#pragma once

#include <stdexcept>
#include <string>

namespace rcf {

/// Base for every error the library raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid construction-time setting (even kernel, zero dims, bad flag).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Caller passed an unusable argument (empty sequence, wrong window length).
class InputError : public Error {
 public:
  using Error::Error;
};

/// Malformed byte stream or file (CSV header, checkpoint).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Dataset content problems: gaps, non-positive values, missing coverage.
class DataError : public Error {
 public:
  enum class Kind { Continuity, Range, Coverage, DegenerateScale, InsufficientData };

  DataError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(int epoch, int batch)
      : Error("training diverged: non-finite loss at epoch " + std::to_string(epoch) +
              ", batch " + std::to_string(batch)),
        epoch_(epoch),
        batch_(batch) {}
  int epoch() const noexcept { return epoch_; }
  int batch() const noexcept { return batch_; }

 private:
  int epoch_;
  int batch_;
};

/// Name lookup failed (entity not in a report, unknown cell kind).
class LookupError : public Error {
 public:
  using Error::Error;
};

/// Cached forward state does not belong to the parameters it is replayed against.
class ConsistencyError : public Error {
 public:
  using Error::Error;
};

}  // namespace rcf
