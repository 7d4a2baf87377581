#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "lakegrid/domain/experiment.hpp"
#include "lakegrid/sweep/sweep.hpp"

namespace lakegrid::fixtures {

std::string met_csv(int rows, double base);
// lake.nml plus met_hourly.csv with `rows` driver rows.
sweep::InputSet baseline(int rows = 48);
// `n` linear AirTemp variants of baseline().
std::vector<SimulationSpec> sims(std::size_t n, int rows = 48);
// Upload layout: one "sim{id}/" directory per simulation.
std::string upload_archive(const std::vector<SimulationSpec>& sims);
std::string baseline_archive(int rows = 48);
// Numeric cells of a CSV column.
std::vector<double> csv_column(const std::string& csv, const std::string& column);
// Fresh empty directory under the system temp dir, unique per process.
std::filesystem::path scratch_dir(const std::string& name);

}  // namespace lakegrid::fixtures
