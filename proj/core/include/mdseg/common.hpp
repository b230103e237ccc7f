#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mdseg {

/// Raised when a caller violates a documented precondition (shape mismatch,
/// bad config value, out-of-range argument).
struct ContractViolation : std::logic_error {
  explicit ContractViolation(const std::string& what) : std::logic_error(what) {}
};

/// Raised when an operation is mathematically undefined for the given input
/// (log of a non-positive value, evaluation outside the function's domain).
struct DomainError : std::domain_error {
  explicit DomainError(const std::string& what) : std::domain_error(what) {}
};

/// Raised when a computation produced NaN/Inf, i.e. training diverged.
struct NumericsError : std::runtime_error {
  explicit NumericsError(const std::string& what) : std::runtime_error(what) {}
};

/// Raised on malformed files (bad magic, truncation, header violations).
struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractViolation(msg);
}

}  // namespace mdseg
