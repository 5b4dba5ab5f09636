#pragma once

#include <stdexcept>
#include <string>

namespace coworld {

// Error classes map 1:1 to CLI exit codes (see tools/coworld_main.cpp).
// Messages name the offending field / step; callers format that in.

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace coworld
