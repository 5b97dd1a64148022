#pragma once

#include <stdexcept>
#include <string>

namespace c2f {

// Contract violation: bad shapes, invalid configuration, API misuse.
class ContractError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Filesystem or file-format problem. Message names the offending file.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values or a failed numeric check.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace c2f
