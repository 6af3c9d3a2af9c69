#pragma once

#include <stdexcept>
#include <string>

namespace kardam {

/// Invalid configuration or mismatched dimensions supplied by the caller.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A server-loop contract was broken (e.g. an update with no accepted gradients).
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A NaN or infinity appeared where only finite values are allowed.
class NumericFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reading or writing an artifact failed.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace kardam
