#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lakegrid/sweep/driver_table.hpp"

namespace lakegrid::model {

inline constexpr std::string_view kAirTempColumn = "AirTemp";
inline constexpr std::string_view kOutputFile = "lake_output.csv";

/// Parameters of the surrogate lake model, read from a flat key=value
/// parameter file. Keys: depth_layers, layer_thickness_m, k0, efold_depth_m,
/// initial_temp_c, emulate_ms, met_file.
struct LakeParams {
  int depth_layers = 4;
  double layer_thickness_m = 1.0;
  double k0 = 0.2;
  double efold_depth_m = 2.0;
  double initial_temp_c = 4.0;
  std::optional<std::int64_t> emulate_ms;
  std::string met_file = "met_hourly.csv";

  void validate() const;
  std::string to_text() const;
  static LakeParams parse(std::string_view text);
};

/// Water temperature per layer per driver row. Row t holds the state after
/// the forcing of driver row t has been applied.
struct LakeOutput {
  std::vector<std::string> timestamps;
  std::vector<std::vector<double>> temps;  // [row][layer]

  std::size_t layers() const { return temps.empty() ? 0 : temps.front().size(); }
  double surface(std::size_t row) const { return temps.at(row).front(); }
  double bottom(std::size_t row) const { return temps.at(row).back(); }
  double column_mean(std::size_t row) const;

  // "time,temp_0,...,temp_{L-1}"
  std::string to_csv() const;
  static LakeOutput parse_csv(std::string_view csv);
};

/// Exponential relaxation toward air temperature, attenuated with depth:
///   T[t+1][z] = T[t][z] + k(z) * (AirTemp[t] - T[t][z]),  k(z) = k0 * exp(-z*dz/d)
/// When an emulated duration is in effect the call takes at least that long.
LakeOutput run_model(const LakeParams& params, const sweep::DriverTable& driver,
                     std::optional<std::int64_t> emulate_ms_override = std::nullopt);

/// A projected output table; cells keep their rendered text.
struct FeatureTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::string to_csv() const;
  static FeatureTable parse_csv(std::string_view csv);
  // Restricts to the time column plus `columns` (in the requested order).
  FeatureTable project(const std::vector<std::string>& columns) const;

  bool operator==(const FeatureTable&) const = default;
};

/// Materializes the requested columns: layer columns temp_<z> plus the
/// derived temp_surface, temp_bottom and temp_mean. An empty list selects
/// every layer column, which reproduces the full output table.
FeatureTable extract_features(const LakeOutput& out, const std::vector<std::string>& columns);

std::vector<std::string> available_columns(const LakeOutput& out);

}  // namespace lakegrid::model
