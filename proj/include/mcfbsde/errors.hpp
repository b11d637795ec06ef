#pragma once

#include <stdexcept>
#include <string>

namespace mcfbsde {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad input: malformed generator, dimension mismatch, out-of-range index,
/// violated step constraint, unreadable configuration.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// A numerical procedure did not reach its target (fixed point, Riccati
/// integration, residual certification).
class SolverError : public Error {
public:
    using Error::Error;
};

/// Expression-language failures carry a 1-based source position.
class ExprError : public Error {
public:
    ExprError(const std::string& what, int line, int column)
        : Error(std::to_string(line) + ":" + std::to_string(column) + ": " + what),
          line_(line), column_(column) {}

    int line() const noexcept { return line_; }
    int column() const noexcept { return column_; }

private:
    int line_;
    int column_;
};

}  // namespace mcfbsde
