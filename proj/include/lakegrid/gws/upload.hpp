#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "lakegrid/domain/experiment.hpp"
#include "lakegrid/sweep/sweep.hpp"

namespace lakegrid::gws {

// Only data files are accepted as input.
inline constexpr std::array<std::string_view, 3> kAllowedExtensions{".nml", ".csv", ".txt"};

// True when the bytes look like something a system could execute: a
// script interpreter line or an ELF, PE or Mach-O header.
bool looks_executable(std::string_view content);

/// Opens an uploaded archive and screens every entry. Throws
/// Error(Validation) for a malformed archive and Error(Policy) for an entry
/// that is not a plain data file, by name or by content.
std::map<std::string, std::string> screen_upload(std::string archive, std::uint64_t max_unpacked_bytes);

// One simulation per top-level directory, numbered in natural directory-name
// order (run2 before run10). Throws Error(Validation).
std::vector<SimulationSpec> sims_from_upload(const std::map<std::string, std::string>& files);

// Baseline files for a sweep: either flat, or inside a single directory.
// Throws Error(Validation).
sweep::InputSet baseline_from_upload(const std::map<std::string, std::string>& files);

}  // namespace lakegrid::gws
