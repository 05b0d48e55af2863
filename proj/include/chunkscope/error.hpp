#pragma once

#include <stdexcept>
#include <string>

namespace chunkscope {

enum class ErrorKind {
  InvalidSpec,        // malformed generation/training/extraction parameters
  ContractViolation,  // caller broke a documented precondition (shapes, ranges)
  EmptyOccurrence,    // no usable signal occurrences
  Corruption,         // on-disk data inconsistent with its manifest
  Io,
  Numerical,          // NaN/Inf or divergence
  PolicyResolution,   // graft policy references states that do not exist
};

const char* to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace chunkscope
