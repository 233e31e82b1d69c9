#pragma once

#include <stdexcept>
#include <string>

namespace quasid {

// Categories map onto CLI exit codes (usage 2, data 3, numeric 4).
enum class ErrorKind {
  shape,     // dimension mismatch between operands
  contract,  // precondition violated by the caller
  config,    // bad hyperparameter or config file content
  data,      // malformed input file or out-of-range value
  numeric,   // non-finite values, failed checks
  usage,     // command-line misuse
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::shape: return "shape";
    case ErrorKind::contract: return "contract";
    case ErrorKind::config: return "config";
    case ErrorKind::data: return "data";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::usage: return "usage";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) throw Error(kind, what);
}

}  // namespace quasid
