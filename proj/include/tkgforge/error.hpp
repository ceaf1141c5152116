#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tkg {

/// Base for every error raised by the library. The CLI maps the subclass to
/// an exit code (validation/config errors -> 1, runtime/endpoint -> 2).
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// A required file is missing or unreadable.
class LoadError : public Error {
public:
  using Error::Error;
};

/// A field could not be parsed. Carries the file and 1-based line.
class ParseError : public Error {
public:
  ParseError(const std::string& file, std::size_t line, const std::string& what)
      : Error(file + ":" + std::to_string(line) + ": " + what), file_(file), line_(line) {}

  const std::string& file() const noexcept { return file_; }
  std::size_t line() const noexcept { return line_; }

private:
  std::string file_;
  std::size_t line_;
};

/// Parsed fine but violates a dataset invariant (id out of range, etc.).
class ValidationError : public Error {
public:
  using Error::Error;
  ValidationError(const std::string& file, std::size_t line, const std::string& what)
      : Error(file + ":" + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

private:
  std::size_t line_ = 0;
};

/// A fact time after the query time reached the relativization step.
class TemporalLeakError : public Error {
public:
  using Error::Error;
};

/// An id was not covered by an anonymization mapping.
class MappingDomainError : public Error {
public:
  using Error::Error;
};

class RenderError : public Error {
public:
  using Error::Error;
};

class ConfigError : public Error {
public:
  using Error::Error;
};

class IoError : public Error {
public:
  using Error::Error;
};

/// Transport-level failure talking to a completion endpoint (retryable).
class EndpointError : public Error {
public:
  using Error::Error;
};

/// The endpoint answered but cannot provide what we need (no logprobs).
class CapabilityError : public Error {
public:
  using Error::Error;
};

} // namespace tkg
