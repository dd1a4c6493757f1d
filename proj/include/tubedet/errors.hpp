#pragma once

#include <stdexcept>

namespace tubedet {

/// Malformed or schema-violating input file (CLI exit code 2).
class ParseError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration value or section (CLI exit code 2).
class ConfigError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Non-finite value where finite arithmetic was required, e.g. a diverged
/// training loss (CLI exit code 3).
class NumericalError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

}  // namespace tubedet
