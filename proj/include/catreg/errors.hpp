#pragma once

#include <stdexcept>
#include <string>

namespace catreg {

// Malformed or out-of-range configuration. The CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad input data (out-of-range class ids, unreadable files, corrupt blobs).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller broke an operation's precondition.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Training diverged (non-finite loss).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

[[noreturn]] void contract_fail(const std::string& what);

inline void require(bool condition, const char* what) {
  if (!condition) contract_fail(what);
}

}  // namespace catreg
