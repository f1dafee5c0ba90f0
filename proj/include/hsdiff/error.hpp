#pragma once

#include <stdexcept>
#include <string>

namespace hsdiff {

// Runtime failure of an operation (bad input data, solver breakdown, ...).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller broke a documented precondition.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Invalid or inconsistent experiment configuration (CLI exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A physical or bookkeeping invariant failed during a run (CLI exit code 3).
class InvariantFailure : public Error {
 public:
  using Error::Error;
};

inline void require(bool condition, const std::string& what) {
  if (!condition) throw ContractViolation(what);
}

}  // namespace hsdiff
