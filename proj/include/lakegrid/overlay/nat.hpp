#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

#include "lakegrid/overlay/endpoint.hpp"

namespace lakegrid::overlay {

enum class NatClass { Open, FullCone, Restricted, PortRestricted, Symmetric };

inline constexpr std::array<NatClass, 5> kAllNatClasses{NatClass::Open, NatClass::FullCone,
                                                       NatClass::Restricted, NatClass::PortRestricted,
                                                       NatClass::Symmetric};

// "OPEN", "FULL_CONE", "RESTRICTED", "PORT_RESTRICTED", "SYMMETRIC"
std::string_view to_string(NatClass c);
NatClass parse_nat_class(std::string_view text);

enum class Mapping { EndpointIndependent, AddressAndPortDependent };
enum class Filtering { None, Address, AddressAndPort };
enum class PortAllocation { Sequential, Random };

/// Behaviour of a simulated NAT box.
struct NatPolicy {
  NatClass nat_class = NatClass::Open;
  Mapping mapping = Mapping::EndpointIndependent;
  Filtering filtering = Filtering::None;
  PortAllocation ports = PortAllocation::Sequential;

  static NatPolicy for_class(NatClass c);
  // Throws Error(Validation) when the flags contradict the class.
  void validate() const;
};

/// Answers gathered from a two-address reflector.
///   test1:  probe primary address, reply from the same address
///   test2:  probe primary, ask for a reply from the other address and port
///   test1b: probe the alternate address (mapping comparison)
///   test3:  probe primary, ask for a reply from the other port only
struct ProbeObservations {
  Endpoint local;
  std::optional<Endpoint> test1_mapped;
  bool test2_received = false;
  std::optional<Endpoint> test1b_mapped;
  bool test3_received = false;
};

// Throws Error(Connectivity) when no reflector answered at all.
NatClass classify_nat(const ProbeObservations& obs);

}  // namespace lakegrid::overlay
