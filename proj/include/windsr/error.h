#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace windsr {

enum class ErrorKind {
  kConfig,
  kShape,
  kDomain,
  kIngestion,
  kRange,
  kSize,
  kDegenerateRange,
  kDecode,
  kDivergence,
  kPlan,
  kIo,
};

std::string_view to_string(ErrorKind kind);

// Every failure surfaced by the library is an Error carrying a kind so callers
// (and the CLI's JSON error channel) can branch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& what);

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace windsr
