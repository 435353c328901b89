#pragma once

#include <stdexcept>
#include <string>

namespace rlcf {

// Failure classes map one-to-one onto the CLI exit codes.
enum class ErrorKind {
  kInvalidInput,     // malformed data or violated precondition
  kConfig,           // bad configuration or unreadable path (exit 2)
  kTrainingAbort,    // non-finite loss or divergence (exit 3)
  kMissingArtifact,  // checkpoint or stage output not found (exit 4)
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}
  explicit Error(const std::string& message)
      : Error(ErrorKind::kInvalidInput, message) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace rlcf
