#pragma once

#include <stdexcept>
#include <string>

namespace vidkern {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor extents.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A documented precondition does not hold (empty sequence, non-scalar loss, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration: even kernel extents, bad config files, unknown task names.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Invalid data values: out-of-range labels or token ids, malformed input files.
class DataError : public Error {
 public:
  using Error::Error;
};

// Binary tensor file could not be parsed; `field()` names the offending header field.
class ParseError : public DataError {
 public:
  ParseError(std::string field, const std::string& what)
      : DataError(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

// A numeric self-check (gradient check, invariant) failed.
class NumericCheckError : public Error {
 public:
  using Error::Error;
};

}  // namespace vidkern
