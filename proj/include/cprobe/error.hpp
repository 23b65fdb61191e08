#pragma once

#include <stdexcept>
#include <string>

namespace cprobe {

// Broad failure classes. The CLI maps them onto its exit codes.
enum class ErrorKind {
    invalid_argument,  // bad parameters or ranges (exit 2)
    input_data,        // malformed or inconsistent input files (exit 3)
    numeric,           // degenerate statistics, non-finite iterates (exit 4)
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

class InvalidArgument : public Error {
public:
    explicit InvalidArgument(const std::string& what) : Error(ErrorKind::invalid_argument, what) {}
};

class InputError : public Error {
public:
    explicit InputError(const std::string& what) : Error(ErrorKind::input_data, what) {}
};

class NumericError : public Error {
public:
    explicit NumericError(const std::string& what) : Error(ErrorKind::numeric, what) {}
};

// Thrown when a statistic needs variation that the data does not have.
class ZeroVarianceError : public NumericError {
public:
    explicit ZeroVarianceError(const std::string& what) : NumericError(what) {}
};

}  // namespace cprobe
