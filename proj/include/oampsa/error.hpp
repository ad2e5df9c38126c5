#pragma once

#include <stdexcept>
#include <string>

namespace oampsa {

// Exit codes surfaced by the command-line front end.
enum class ExitCode : int { ok = 0, usage = 2, data = 3, numeric = 4 };

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what, ExitCode code) : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(what, ExitCode::usage) {}
};

/// Malformed, missing or inconsistent input data (files, dimensions, labels).
class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(what, ExitCode::data) {}
};

class DimensionError : public DataError {
 public:
  explicit DimensionError(const std::string& what) : DataError("dimension mismatch: " + what) {}
};

/// Singular systems, non-finite losses and other arithmetic breakdowns.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(what, ExitCode::numeric) {}
};

class SingularSystemError : public NumericError {
 public:
  explicit SingularSystemError(const std::string& what) : NumericError("singular system: " + what) {}
};

}  // namespace oampsa
