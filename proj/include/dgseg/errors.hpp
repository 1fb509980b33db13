#pragma once

#include <stdexcept>
#include <string>

namespace dgseg {

/// Bad user input: malformed files, out-of-range config, missing data.
/// The CLI maps this to exit code 2.
class ValidationError : public std::runtime_error {
public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

/// Numeric breakdown during computation: non-finite loss or gradient,
/// failed gradient verification. The CLI maps this to exit code 3.
class NumericError : public std::runtime_error {
public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace dgseg
