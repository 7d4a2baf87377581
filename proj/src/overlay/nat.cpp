#include "lakegrid/overlay/nat.hpp"

#include "lakegrid/common/error.hpp"

namespace lakegrid::overlay {

std::string_view to_string(NatClass c) {
  switch (c) {
    case NatClass::Open: return "OPEN";
    case NatClass::FullCone: return "FULL_CONE";
    case NatClass::Restricted: return "RESTRICTED";
    case NatClass::PortRestricted: return "PORT_RESTRICTED";
    case NatClass::Symmetric: return "SYMMETRIC";
  }
  return "?";
}

NatClass parse_nat_class(std::string_view text) {
  for (auto c : kAllNatClasses) {
    if (to_string(c) == text) return c;
  }
  throw Error(ErrorKind::Validation, "unknown NAT class '" + std::string(text) + "'");
}

NatPolicy NatPolicy::for_class(NatClass c) {
  NatPolicy p;
  p.nat_class = c;
  switch (c) {
    case NatClass::Open:
    case NatClass::FullCone: p.filtering = Filtering::None; break;
    case NatClass::Restricted: p.filtering = Filtering::Address; break;
    case NatClass::PortRestricted: p.filtering = Filtering::AddressAndPort; break;
    case NatClass::Symmetric:
      p.mapping = Mapping::AddressAndPortDependent;
      p.filtering = Filtering::AddressAndPort;
      break;
  }
  return p;
}

void NatPolicy::validate() const {
  auto expected = for_class(nat_class);
  if (mapping != expected.mapping || filtering != expected.filtering) {
    throw Error(ErrorKind::Validation,
                "NAT policy flags inconsistent with class " + std::string(to_string(nat_class)));
  }
}

NatClass classify_nat(const ProbeObservations& obs) {
  if (!obs.test1_mapped && !obs.test1b_mapped) {
    throw Error(ErrorKind::Connectivity, "NAT classification unavailable: no reflector answered");
  }
  const Endpoint mapped = obs.test1_mapped ? *obs.test1_mapped : *obs.test1b_mapped;
  if (mapped == obs.local) return NatClass::Open;
  if (obs.test2_received) return NatClass::FullCone;
  // Without both answers the mappings cannot be compared; assume a cone.
  if (obs.test1_mapped && obs.test1b_mapped && *obs.test1_mapped != *obs.test1b_mapped) {
    return NatClass::Symmetric;
  }
  return obs.test3_received ? NatClass::Restricted : NatClass::PortRestricted;
}

}  // namespace lakegrid::overlay
