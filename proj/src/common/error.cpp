#include "lakegrid/common/error.hpp"

namespace lakegrid {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidSpec: return "invalid_spec";
    case ErrorKind::Input: return "input";
    case ErrorKind::Contract: return "contract";
    case ErrorKind::NotFound: return "not_found";
    case ErrorKind::Conflict: return "conflict";
    case ErrorKind::Policy: return "policy";
    case ErrorKind::Validation: return "validation";
    case ErrorKind::Transport: return "transport";
    case ErrorKind::Security: return "security";
    case ErrorKind::Connectivity: return "connectivity";
    case ErrorKind::Packaging: return "packaging";
    case ErrorKind::Harness: return "harness";
    case ErrorKind::Internal: return "internal";
  }
  return "unknown";
}

}  // namespace lakegrid
