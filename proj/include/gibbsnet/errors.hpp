#pragma once

#include <stdexcept>
#include <string>

namespace gibbsnet {

// Error categories map one-to-one onto CLI exit codes (see tools/gibbsnet.cpp).

/// Invalid configuration, arguments or input files.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A sampler or optimizer left the stable regime (non-finite values or
/// parameters beyond the stability threshold).
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A post-processing step could not produce a meaningful result.
class AnalysisError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace gibbsnet
