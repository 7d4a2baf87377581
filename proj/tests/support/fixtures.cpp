#include "fixtures.hpp"

#include <unistd.h>

#include "lakegrid/common/kv.hpp"
#include "lakegrid/gemt/archive.hpp"
#include "lakegrid/model/lake_model.hpp"

namespace lakegrid::fixtures {

std::string met_csv(int rows, double base) {
  std::string csv = "time,AirTemp,Wind\n";
  for (int i = 0; i < rows; ++i) {
    csv += std::to_string(i) + "," + std::to_string(base + i % 7) + ",3\n";
  }
  return csv;
}

sweep::InputSet baseline(int rows) {
  return {{"lake.nml", share(model::LakeParams{}.to_text())}, {"met_hourly.csv", share(met_csv(rows, 10.0))}};
}

std::vector<SimulationSpec> sims(std::size_t n, int rows) {
  sweep::SweepSpec spec;
  spec.driver_file = "met_hourly.csv";
  spec.variable = "AirTemp";
  spec.mode = sweep::SweepMode::Linear;
  spec.start_value = -2;
  spec.end_value = 2;
  spec.count = n;
  return sweep::expand(baseline(rows), spec);
}

std::string upload_archive(const std::vector<SimulationSpec>& sims) {
  std::map<std::string, std::string> files;
  for (const auto& s : sims) {
    for (const auto& [name, data] : s.input_files) files["sim" + std::to_string(s.sim_id) + "/" + name] = *data;
  }
  return gemt::pack(files);
}

std::string baseline_archive(int rows) {
  std::map<std::string, std::string> files;
  for (const auto& [name, data] : baseline(rows)) files[name] = *data;
  return gemt::pack(files);
}

std::vector<double> csv_column(const std::string& csv, const std::string& column) {
  std::vector<double> out;
  auto lines = split(csv, '\n');
  auto header = split(lines.at(0), ',');
  std::size_t idx = 0;
  while (idx < header.size() && trim(header[idx]) != column) ++idx;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    out.push_back(parse_double(trim(split(lines[i], ',').at(idx))).value());
  }
  return out;
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("lakegrid_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace lakegrid::fixtures
