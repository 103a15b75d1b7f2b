#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace winfrac {

enum class ErrorKind { Schema, Parse, Domain, Config, Numerical, Convergence };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct SchemaError : Error {
  explicit SchemaError(const std::string& m) : Error(ErrorKind::Schema, m) {}
};

// Carries every offending data row (1-based, header excluded).
struct ParseError : Error {
  ParseError(const std::string& m, std::vector<std::size_t> r)
      : Error(ErrorKind::Parse, m), rows(std::move(r)) {}
  std::vector<std::size_t> rows;
};

struct DomainError : Error {
  explicit DomainError(const std::string& m) : Error(ErrorKind::Domain, m) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& m) : Error(ErrorKind::Config, m) {}
};

struct NumericalError : Error {
  explicit NumericalError(const std::string& m) : Error(ErrorKind::Numerical, m) {}
};

struct ConvergenceError : Error {
  explicit ConvergenceError(const std::string& m) : Error(ErrorKind::Convergence, m) {}
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::Schema: return "schema";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::Domain: return "domain";
    case ErrorKind::Config: return "config";
    case ErrorKind::Numerical: return "numerical";
    case ErrorKind::Convergence: return "convergence";
  }
  return "unknown";
}

}  // namespace winfrac
