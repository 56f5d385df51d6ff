#pragma once

#include <stdexcept>
#include <string>

namespace dcmr {

// Error taxonomy. Everything user-facing derives from Error so the CLI can
// map any library failure to a nonzero exit without catching (...) blindly.

class Error : public std::runtime_error {
public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape or rank disagreement between tensors/operands.
class DimensionError : public Error {
public:
  using Error::Error;
};

// Invalid configuration value or inconsistent config combination.
class ConfigError : public Error {
public:
  using Error::Error;
};

// Violated call contract (bad argument outside shape concerns).
class ContractError : public Error {
public:
  using Error::Error;
};

// NaN/Inf encountered, division by zero variance, failed normalization.
class NumericError : public Error {
public:
  using Error::Error;
};

// Malformed file. Carries the byte offset where parsing failed.
class FormatError : public Error {
public:
  FormatError(const std::string& msg, std::uint64_t offset)
      : Error(msg + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::uint64_t offset() const { return offset_; }

private:
  std::uint64_t offset_;
};

// Manifest/archive cross-validation failure, missing ids, bad splits.
class DatasetError : public Error {
public:
  using Error::Error;
};

// Caption routed to the wrong encoder branch.
class RoutingError : public Error {
public:
  using Error::Error;
};

class IoError : public Error {
public:
  using Error::Error;
};

// Translation backend unreachable or persistently failing.
class BackendError : public Error {
public:
  using Error::Error;
};

// Translation backend reachable but response malformed.
class ProtocolError : public Error {
public:
  using Error::Error;
};

}  // namespace dcmr
