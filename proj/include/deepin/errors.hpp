#pragma once

#include <stdexcept>
#include <string>

namespace deepin {

/// Caller broke a documented precondition (maps to CLI exit code 1).
class contract_violation : public std::logic_error {
 public:
  explicit contract_violation(const std::string& what) : std::logic_error(what) {}
};

/// A numerical routine could not produce a valid result (CLI exit code 2).
class numerical_failure : public std::runtime_error {
 public:
  explicit numerical_failure(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace deepin
