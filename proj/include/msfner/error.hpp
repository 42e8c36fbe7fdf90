#pragma once

#include <stdexcept>
#include <string>

namespace msfner {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration or arguments. CLI exit code 2.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed, missing or inconsistent input data. CLI exit code 3.
class DataError : public Error {
public:
    using Error::Error;
};

/// NaN/Inf encountered or a numeric precondition violated. CLI exit code 4.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Binary file format failure; `kind` distinguishes the variants.
class FormatError : public DataError {
public:
    enum class Kind { BadMagic, BadVersion, Truncated, NonFinite, Inconsistent };

    FormatError(Kind kind, const std::string& what) : DataError(what), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

}  // namespace msfner
