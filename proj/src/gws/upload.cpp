#include "lakegrid/gws/upload.hpp"

#include <algorithm>
#include <cctype>

#include "lakegrid/common/error.hpp"
#include "lakegrid/gemt/archive.hpp"

namespace lakegrid::gws {

bool looks_executable(std::string_view c) {
  return c.starts_with("#!") || c.starts_with("\x7f" "ELF") || c.starts_with("MZ") ||
         c.starts_with("\xfe\xed\xfa\xce") || c.starts_with("\xfe\xed\xfa\xcf") ||
         c.starts_with("\xce\xfa\xed\xfe") || c.starts_with("\xcf\xfa\xed\xfe") ||
         c.starts_with("\xca\xfe\xba\xbe");
}

std::map<std::string, std::string> screen_upload(std::string archive, std::uint64_t max_unpacked_bytes) {
  std::map<std::string, std::string> files;
  try {
    gemt::ArchiveReader reader(std::move(archive));
    if (reader.unpacked_size() > max_unpacked_bytes) {
      throw Error(ErrorKind::Validation, "upload expands beyond " + std::to_string(max_unpacked_bytes) + " bytes");
    }
    files = reader.unpack();
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Validation) throw;
    throw Error(ErrorKind::Validation, std::string("malformed upload archive: ") + e.what());
  }
  if (files.empty()) throw Error(ErrorKind::Validation, "upload archive is empty");
  for (const auto& [path, content] : files) {
    const auto dot = path.rfind('.');
    const auto slash = path.rfind('/');
    const std::string ext = dot == std::string::npos || (slash != std::string::npos && dot < slash)
                                ? std::string()
                                : path.substr(dot);
    if (std::find(kAllowedExtensions.begin(), kAllowedExtensions.end(), ext) == kAllowedExtensions.end()) {
      throw Error(ErrorKind::Policy, "'" + path + "' is not a data file; only .nml, .csv and .txt are accepted");
    }
    if (looks_executable(content)) {
      throw Error(ErrorKind::Policy, "'" + path + "' has executable content");
    }
  }
  return files;
}

namespace {

// "run2" sorts before "run10".
bool natural_less(const std::string& a, const std::string& b) {
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (std::isdigit(static_cast<unsigned char>(a[i])) && std::isdigit(static_cast<unsigned char>(b[j]))) {
      std::size_t ie = i, je = j;
      while (ie < a.size() && std::isdigit(static_cast<unsigned char>(a[ie]))) ++ie;
      while (je < b.size() && std::isdigit(static_cast<unsigned char>(b[je]))) ++je;
      auto na = a.substr(i, ie - i), nb = b.substr(j, je - j);
      na.erase(0, std::min(na.find_first_not_of('0'), na.size()));
      nb.erase(0, std::min(nb.find_first_not_of('0'), nb.size()));
      if (na.size() != nb.size()) return na.size() < nb.size();
      if (na != nb) return na < nb;
      i = ie;
      j = je;
    } else {
      if (a[i] != b[j]) return a[i] < b[j];
      ++i;
      ++j;
    }
  }
  if ((a.size() - i) != (b.size() - j)) return a.size() - i < b.size() - j;
  return a < b;
}

}  // namespace

std::vector<SimulationSpec> sims_from_upload(const std::map<std::string, std::string>& files) {
  std::map<std::string, std::map<std::string, SharedBytes>, decltype(&natural_less)> dirs(&natural_less);
  for (const auto& [path, content] : files) {
    const auto slash = path.find('/');
    if (slash == std::string::npos || path.find('/', slash + 1) != std::string::npos) {
      throw Error(ErrorKind::Validation, "'" + path + "' must sit directly inside one simulation directory");
    }
    dirs[path.substr(0, slash)][path.substr(slash + 1)] = share(content);
  }
  std::vector<SimulationSpec> sims;
  for (auto& [name, inputs] : dirs) {
    SimulationSpec s;
    s.sim_id = sims.size();
    s.input_files = std::move(inputs);
    try {
      s.validate();
    } catch (const Error& e) {
      throw Error(ErrorKind::Validation, "simulation directory '" + name + "': " + e.what());
    }
    sims.push_back(std::move(s));
  }
  return sims;
}

sweep::InputSet baseline_from_upload(const std::map<std::string, std::string>& files) {
  sweep::InputSet flat;
  std::string prefix;
  bool nested = false;
  for (const auto& [path, content] : files) {
    const auto slash = path.find('/');
    if (slash == std::string::npos) {
      flat[path] = share(content);
      continue;
    }
    if (path.find('/', slash + 1) != std::string::npos) {
      throw Error(ErrorKind::Validation, "'" + path + "' is nested too deeply for a baseline");
    }
    const auto dir = path.substr(0, slash);
    if (nested && dir != prefix) throw Error(ErrorKind::Validation, "baseline must be a single simulation directory");
    nested = true;
    prefix = dir;
    flat[path.substr(slash + 1)] = share(content);
  }
  if (nested && flat.size() != files.size()) {
    throw Error(ErrorKind::Validation, "baseline mixes top-level files and a directory");
  }
  SimulationSpec probe;
  probe.input_files = flat;
  try {
    probe.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::Validation, std::string("baseline: ") + e.what());
  }
  return flat;
}

}  // namespace lakegrid::gws
