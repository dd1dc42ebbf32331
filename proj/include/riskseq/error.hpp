#ifndef RISKSEQ_ERROR_HPP
#define RISKSEQ_ERROR_HPP

#include <stdexcept>
#include <string>

namespace riskseq {

// Process exit codes used by the command line tool.
enum class ExitCode : int { ok = 0, config = 2, data = 3, numeric = 4 };

class Error : public std::runtime_error {
 public:
  Error(ExitCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

  const char* tag() const noexcept {
    switch (code_) {
      case ExitCode::config: return "E_CONFIG";
      case ExitCode::data: return "E_DATA";
      case ExitCode::numeric: return "E_NUMERIC";
      default: return "E_OK";
    }
  }

 private:
  ExitCode code_;
};

/// Invalid configuration, schema, or command line input.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ExitCode::config, what) {}
};

/// Malformed or inconsistent data files.
class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ExitCode::data, what) {}
};

/// Shape mismatches, non-finite values, failed solvers.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ExitCode::numeric, what) {}
};

}  // namespace riskseq

#endif  // RISKSEQ_ERROR_HPP
