#pragma once

#include <stdexcept>

namespace mmkp::cli {

// Bad configuration file, override or flag combination.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mmkp::cli
