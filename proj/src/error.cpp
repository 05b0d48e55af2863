#include "chunkscope/error.hpp"

namespace chunkscope {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::InvalidSpec: return "invalid spec";
    case ErrorKind::ContractViolation: return "contract violation";
    case ErrorKind::EmptyOccurrence: return "empty occurrence";
    case ErrorKind::Corruption: return "corruption";
    case ErrorKind::Io: return "i/o error";
    case ErrorKind::Numerical: return "numerical error";
    case ErrorKind::PolicyResolution: return "policy resolution error";
  }
  return "error";
}

}  // namespace chunkscope
