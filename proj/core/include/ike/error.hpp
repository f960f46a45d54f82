#pragma once

#include <stdexcept>
#include <string>

namespace ike {

/** Base class for every error the library throws on purpose. */
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/** Malformed input that could not be decoded (bad JSON, bad line syntax). */
class ParseError : public Error {
 public:
  using Error::Error;
};

/** Well-formed input that violates a documented data invariant. */
class ValidationError : public Error {
 public:
  using Error::Error;
};

/** Inconsistent or incomplete run configuration. */
class ConfigError : public Error {
 public:
  using Error::Error;
};

/** A caller broke a function precondition. */
class ContractError : public Error {
 public:
  using Error::Error;
};

/** Filesystem trouble: missing file, unreadable path, failed write. */
class IoError : public Error {
 public:
  using Error::Error;
};

/** Network-level failure after the retry budget is spent. */
class TransportError : public Error {
 public:
  TransportError(const std::string& what, int attempts)
      : Error(what), attempts_(attempts) {}
  int attempts() const { return attempts_; }

 private:
  int attempts_ = 0;
};

/** The remote answered, but not in the shape the protocol promises. */
class ProtocolError : public Error {
 public:
  ProtocolError(const std::string& what, std::string payload)
      : Error(what), payload_(std::move(payload)) {}
  const std::string& payload() const { return payload_; }

 private:
  std::string payload_;
};

}  // namespace ike
