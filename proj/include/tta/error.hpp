#pragma once

#include <stdexcept>
#include <string>

namespace tta {

/// Exit codes shared by the CLI and by anything scripting around it.
enum class ExitCode : int { kOk = 0, kUsage = 2, kData = 3, kAdapter = 4 };

class Error : public std::runtime_error {
 public:
  Error(ExitCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

/// Bad arguments, unknown names, invalid configuration.
class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(ExitCode::kUsage, what) {}
};

/// Malformed files, shape mismatches, checksum failures.
class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ExitCode::kData, what) {}
};

/// The model backend failed or spoke the protocol wrong.
class AdapterError : public Error {
 public:
  explicit AdapterError(const std::string& what) : Error(ExitCode::kAdapter, what) {}
};

}  // namespace tta
