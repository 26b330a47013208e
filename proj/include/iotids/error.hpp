#pragma once

#include <stdexcept>
#include <string>

namespace iotids {

/// Invalid or inconsistent configuration: missing columns, bad options,
/// unsupported resolutions. The CLI maps it to exit code 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input data that cannot be processed (empty streams, corrupt files,
/// unknown labels). The CLI maps it to exit code 2.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace iotids
