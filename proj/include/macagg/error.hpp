#pragma once

#include <stdexcept>
#include <string>

namespace macagg {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A scheme or operation parameter violates its documented domain.
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Wire bytes could not be parsed.
class DecodeError : public Error {
 public:
  using Error::Error;
};

// A record would not fit into the configured link MTU.
class SizeError : public Error {
 public:
  using Error::Error;
};

// Protocol state machine violation (busy update, epoch overflow, abort).
class ProtocolError : public Error {
 public:
  using Error::Error;
};

// Lookup of a sequence number the ledger does not know.
class NotFoundError : public Error {
 public:
  using Error::Error;
};

// Boundary fitting failed; what() carries the diagnostic.
class FitError : public Error {
 public:
  using Error::Error;
};

// Malformed configuration or data file.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace macagg
