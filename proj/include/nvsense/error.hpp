#pragma once

#include <stdexcept>
#include <string>

namespace nvsense {

// Exit codes reported by the command-line runner.
enum class ExitCode : int { ok = 0, failure = 1, config = 2, resource = 3, numerical = 4 };

class Error : public std::runtime_error {
 public:
  Error(ExitCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ExitCode::config, what) {}
};

class ResourceError : public Error {
 public:
  explicit ResourceError(const std::string& what) : Error(ExitCode::resource, what) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error(ExitCode::numerical, what) {}
};

// Precondition violations on library calls. Reported like configuration errors
// because in practice they come from bad input values.
class InvalidArgument : public Error {
 public:
  explicit InvalidArgument(const std::string& what) : Error(ExitCode::config, what) {}
};

}  // namespace nvsense
