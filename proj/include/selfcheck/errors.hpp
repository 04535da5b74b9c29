// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace selfcheck {

/// Broad failure category; the CLI maps each one to its own exit code.
enum class ErrorKind { precondition, config, transport, data, fixture_incomplete };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class PreconditionError : public Error {
 public:
  explicit PreconditionError(const std::string& what) : Error(ErrorKind::precondition, what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

class TransportError : public Error {
 public:
  explicit TransportError(const std::string& what) : Error(ErrorKind::transport, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

/// A replay fixture has no entry for the requested key.
class FixtureIncompleteError : public Error {
 public:
  explicit FixtureIncompleteError(const std::string& what)
      : Error(ErrorKind::fixture_incomplete, what) {}
};

}  // namespace selfcheck
