#pragma once

#include <stdexcept>
#include <string>

namespace fedss {

// A caller broke an operation's precondition (shape mismatch, bad index, ...).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Input is well-formed but numerically degenerate (zero-norm vector, ...).
class DegenerateInput : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A configuration cannot be satisfied (infeasible partition, m too large, ...).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A client/server message does not match what the protocol allows.
class ProtocolViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed dataset file; the message carries the offending row number.
class IngestError : public std::runtime_error {
 public:
  IngestError(const std::string& what, std::size_t row)
      : std::runtime_error("row " + std::to_string(row) + ": " + what), row_(row) {}
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

inline void require(bool cond, const char* what) {
  if (!cond) throw ContractViolation(what);
}

}  // namespace fedss
