#pragma once

#include <stdexcept>
#include <string>

namespace oasis {

// Error categories used across the library. Contracts name the category they
// throw; tests match on kind() rather than message text.
enum class ErrorKind {
  Dimension,   // shape / extent mismatch
  Parameter,   // invalid argument value
  Numeric,     // non-finite values where finiteness is required
  Input,       // bad user-supplied data (ids out of range, empty traces, ...)
  Config,      // inconsistent configuration
  Degenerate,  // degenerate input (zero variance, empty set)
  Generator,   // instance generator could not satisfy its invariants
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void raise(ErrorKind kind, const std::string& msg) {
  throw Error(kind, msg);
}

inline void require(bool cond, ErrorKind kind, const std::string& msg) {
  if (!cond) raise(kind, msg);
}

}  // namespace oasis
