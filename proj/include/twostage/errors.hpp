#pragma once

#include <stdexcept>
#include <string>

namespace twostage {

// Exit codes used by the command-line tool.
enum class ExitCode : int {
  ok = 0,
  validation = 2,
  infeasible = 3,
  consistency = 4,
};

class twostage_error : public std::runtime_error {
 public:
  twostage_error(ExitCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

class validation_error : public twostage_error {
 public:
  explicit validation_error(const std::string& what)
      : twostage_error(ExitCode::validation, what) {}
};

class infeasible_error : public twostage_error {
 public:
  explicit infeasible_error(const std::string& what)
      : twostage_error(ExitCode::infeasible, what) {}
};

class consistency_error : public twostage_error {
 public:
  explicit consistency_error(const std::string& what)
      : twostage_error(ExitCode::consistency, what) {}
};

}  // namespace twostage
