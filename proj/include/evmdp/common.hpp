#pragma once

#include <stdexcept>
#include <string>

namespace evmdp {

constexpr int kMinutesPerDay = 1440;

/// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input documents (CSV, JSON).
struct ParseError : Error {
    using Error::Error;
};

/// Structurally valid data that violates a precondition (span mismatch,
/// split outside range, missing coverage).
struct DataError : Error {
    using Error::Error;
};

/// Invalid run configuration.
struct ConfigError : Error {
    using Error::Error;
};

/// Numerical failure (non-convergence with no usable fallback).
struct NumericError : Error {
    using Error::Error;
};

/// Maps an arbitrary minute index to the diurnal cycle, s in 1..1440.
/// Minute 00:00-00:01 is s = 1; s = 1440 maps to itself.
inline int wrap_minute_of_day(long long s)
{
    long long r = (s - 1) % kMinutesPerDay;
    if (r < 0) r += kMinutesPerDay;
    return static_cast<int>(r) + 1;
}

} // namespace evmdp
