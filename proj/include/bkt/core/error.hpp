#pragma once

#include <stdexcept>
#include <string>

namespace bkt {

/// Invalid user-supplied configuration (bad override, malformed config file).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A model bank or kernel that fails its construction-time checks.
class ModelDefinitionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SimulationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SamplerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Programming error: a documented precondition was violated by the caller.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

inline void expects(bool condition, const char* what) {
  if (!condition) throw ContractViolation(what);
}

inline void expects(bool condition, const std::string& what) {
  if (!condition) throw ContractViolation(what);
}

}  // namespace bkt
