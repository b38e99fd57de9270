#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace storyanchor {

enum class ErrorCategory {
  kShape,
  kIndex,
  kInvalidArgument,
  kConsistency,
  kNumeric,
  kLoad,
  kFormat,
  kData,
  kDiverged,
  kConfigMismatch,
  kUsage,
};

constexpr std::string_view category_name(ErrorCategory category) {
  switch (category) {
    case ErrorCategory::kShape: return "shape-error";
    case ErrorCategory::kIndex: return "index-error";
    case ErrorCategory::kInvalidArgument: return "invalid-argument";
    case ErrorCategory::kConsistency: return "consistency-error";
    case ErrorCategory::kNumeric: return "numeric-error";
    case ErrorCategory::kLoad: return "load-error";
    case ErrorCategory::kFormat: return "format-error";
    case ErrorCategory::kData: return "data-error";
    case ErrorCategory::kDiverged: return "diverged-error";
    case ErrorCategory::kConfigMismatch: return "config-mismatch";
    case ErrorCategory::kUsage: return "usage-error";
  }
  return "error";
}

/// Every failure raised by the library carries a category so the CLI can map
/// it to an exit code and a machine-parsable one-line message.
class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& message)
      : std::runtime_error(message), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

[[noreturn]] inline void fail(ErrorCategory category, const std::string& message) {
  throw Error(category, message);
}

}  // namespace storyanchor
