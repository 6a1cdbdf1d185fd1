#pragma once

#include <stdexcept>
#include <string>

namespace seam {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or arguments (CLI exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent data (CLI exit code 3).
class DataError : public Error {
 public:
  using Error::Error;
};

/// A scoring backend failed (CLI exit code 4).
class BackendError : public Error {
 public:
  using Error::Error;
};

/// Network failure, timeout, or 5xx after all attempts were used.
class TransientError : public BackendError {
 public:
  using BackendError::BackendError;
};

/// The service answered with a body that does not follow the wire protocol.
class ProtocolError : public BackendError {
 public:
  using BackendError::BackendError;
};

/// The service answered with a non-retryable, non-2xx status.
class ServiceError : public BackendError {
 public:
  ServiceError(int status, const std::string& what)
      : BackendError(what), status_(status) {}
  int status() const noexcept { return status_; }

 private:
  int status_;
};

}  // namespace seam
