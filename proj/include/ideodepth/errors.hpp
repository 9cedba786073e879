#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ideodepth {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Input data violates a documented invariant or precondition.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// A line- or cell-oriented text input could not be parsed.
class ParseError : public ValidationError {
public:
    ParseError(const std::string& what, std::size_t line)
        : ValidationError("line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Binary container is structurally wrong (magic, header, dtype).
class FormatError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// Binary container is well-formed but its payload is damaged.
class CorruptionError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// Caller-supplied configuration is infeasible or incomplete.
class ConfigError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// Too few usable observations for a statistic.
class InsufficientDataError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// A pair of items lacks enough jointly observed cases.
class CoverageError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Chat endpoint unreachable or returned a non-success status after retries.
class TransportError : public Error {
public:
    using Error::Error;
};

/// Judge reply did not match the requested structured block.
class JudgeFormatError : public Error {
public:
    using Error::Error;
};

/// Iterative procedure hit its iteration cap.
class ConvergenceError : public Error {
public:
    using Error::Error;
};

}  // namespace ideodepth
