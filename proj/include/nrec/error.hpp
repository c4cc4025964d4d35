#pragma once

#include <stdexcept>
#include <string>

namespace nrec {

// Malformed or out-of-contract input data (bad index, unreadable file, ...).
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Inconsistent configuration (even conv window, head count, unknown key, ...).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Failure while a computation was running (NaN loss, corrupt checkpoint, ...).
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace nrec
