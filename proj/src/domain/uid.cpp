#include "lakegrid/domain/uid.hpp"

#include <cstdio>

#include "lakegrid/common/bytes.hpp"
#include "lakegrid/common/error.hpp"
#include "lakegrid/common/kv.hpp"
#include "lakegrid/common/random.hpp"

namespace lakegrid {

Uid Uid::generate() { return Uid(to_hex(secure_random_bytes(kLength / 2))); }

bool Uid::is_valid(std::string_view text) {
  if (text.size() != kLength) return false;
  for (char c : text) {
    bool ok = (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f');
    if (!ok) return false;
  }
  return true;
}

Uid Uid::parse(std::string_view text) {
  if (!is_valid(text)) {
    throw Error(ErrorKind::Validation,
                "malformed uid '" + std::string(text) + "': expected 40 lowercase hex characters");
  }
  return Uid(std::string(text));
}

std::string JobId::str() const {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06u", ordinal);
  return uid.str() + "." + buf;
}

JobId JobId::parse(std::string_view text) {
  auto dot = text.find('.');
  if (dot == std::string_view::npos) throw Error(ErrorKind::Validation, "malformed job id");
  auto ord = parse_int(text.substr(dot + 1));
  if (!ord || *ord < 0 || *ord > 0xffffffffLL) {
    throw Error(ErrorKind::Validation, "malformed job ordinal in '" + std::string(text) + "'");
  }
  return JobId{Uid::parse(text.substr(0, dot)), static_cast<std::uint32_t>(*ord)};
}

}  // namespace lakegrid
