#pragma once

#include <stdexcept>
#include <string>

namespace profchat {

// Base of every error the library throws. kind() is a short stable tag used
// by the CLI to print one machine-parseable line per failure.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define PROFCHAT_DEFINE_ERROR(Name, tag)                               \
  class Name : public Error {                                          \
   public:                                                             \
    explicit Name(const std::string& what) : Error(tag, what) {}       \
  };

PROFCHAT_DEFINE_ERROR(DimensionError, "dimension")
PROFCHAT_DEFINE_ERROR(DomainError, "domain")
PROFCHAT_DEFINE_ERROR(IndexError, "index")
PROFCHAT_DEFINE_ERROR(ContractError, "contract")
PROFCHAT_DEFINE_ERROR(ConfigError, "config")
PROFCHAT_DEFINE_ERROR(ParseError, "parse")
PROFCHAT_DEFINE_ERROR(DeterminismError, "determinism")
PROFCHAT_DEFINE_ERROR(NoCandidateError, "no-candidate")
PROFCHAT_DEFINE_ERROR(IoError, "io")

#undef PROFCHAT_DEFINE_ERROR

}  // namespace profchat
