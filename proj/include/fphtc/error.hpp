#pragma once

#include <stdexcept>
#include <string>

namespace fphtc {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad parameters or configuration (CLI exit code 1).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Input data that cannot be used as given (CLI exit code 2).
class DataError : public Error {
public:
    using Error::Error;
};

/// Malformed file contents; `line` is 0 when not line oriented.
class FormatError : public DataError {
public:
    explicit FormatError(const std::string& what, std::size_t line = 0)
        : DataError(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// A structural invariant was found broken (CLI exit code 3).
class InvariantError : public Error {
public:
    using Error::Error;
};

} // namespace fphtc
