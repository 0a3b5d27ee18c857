#pragma once

#include <stdexcept>
#include <string>

namespace robdet {

/// Bad argument or violated precondition.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed on-disk data. The message names the byte offset or line.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// NaN/inf produced during training or an optimizer update.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A metric that needs both classes was asked for on single-class input.
class UndefinedMetricError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

}  // namespace robdet
