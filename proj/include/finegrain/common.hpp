#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace fg {

// Error taxonomy. Each maps to a distinct CLI exit code (see cli.hpp).
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct FormatError : Error {
    using Error::Error;
};
struct StateError : Error {
    using Error::Error;
};
struct NumericError : Error {
    using Error::Error;
};
struct IoError : Error {
    using Error::Error;
};
struct FusionError : Error {
    using Error::Error;
};

// printf-style formatting into std::string, for error messages and reports.
std::string strfmt(const char* fmt, ...) __attribute__((format(printf, 1, 2)));

}  // namespace fg
