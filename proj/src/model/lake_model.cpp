#include "lakegrid/model/lake_model.hpp"

#include <chrono>
#include <functional>
#include <cmath>
#include <thread>

#include "lakegrid/common/error.hpp"
#include "lakegrid/common/kv.hpp"

namespace lakegrid::model {

namespace {
Error input(const std::string& what) { return Error(ErrorKind::Input, what); }
}  // namespace

void LakeParams::validate() const {
  if (depth_layers < 1) throw input("depth_layers must be >= 1");
  if (!(layer_thickness_m > 0) || !std::isfinite(layer_thickness_m)) {
    throw input("layer_thickness_m must be > 0");
  }
  if (!(k0 > 0 && k0 <= 1)) throw input("k0 must be in (0, 1]");
  if (!(efold_depth_m > 0)) throw input("efold_depth_m must be > 0");
  if (!std::isfinite(initial_temp_c)) throw input("initial_temp_c must be finite");
  if (emulate_ms && *emulate_ms < 0) throw input("emulate_ms must be >= 0");
  if (met_file.empty()) throw input("met_file must not be empty");
}

std::string LakeParams::to_text() const {
  KeyValues kv;
  kv.set("depth_layers", std::to_string(depth_layers));
  kv.set("layer_thickness_m", format_double(layer_thickness_m));
  kv.set("k0", format_double(k0));
  kv.set("efold_depth_m", format_double(efold_depth_m));
  kv.set("initial_temp_c", format_double(initial_temp_c));
  if (emulate_ms) kv.set("emulate_ms", std::to_string(*emulate_ms));
  kv.set("met_file", met_file);
  return kv.format();
}

LakeParams LakeParams::parse(std::string_view text) {
  try {
    auto kv = KeyValues::parse(text);
    LakeParams p;
    p.depth_layers = static_cast<int>(kv.get_int_or("depth_layers", p.depth_layers));
    p.layer_thickness_m = kv.get_double_or("layer_thickness_m", p.layer_thickness_m);
    p.k0 = kv.get_double_or("k0", p.k0);
    p.efold_depth_m = kv.get_double_or("efold_depth_m", kv.get_double_or("d", p.efold_depth_m));
    p.initial_temp_c = kv.get_double_or("initial_temp_c", p.initial_temp_c);
    if (kv.has("emulate_ms")) p.emulate_ms = kv.get_int("emulate_ms");
    p.met_file = kv.get_or("met_file", p.met_file);
    p.validate();
    return p;
  } catch (const Error& e) {
    throw input(std::string("parameter file: ") + e.what());
  }
}

double LakeOutput::column_mean(std::size_t row) const {
  const auto& r = temps.at(row);
  double sum = 0;
  for (double v : r) sum += v;
  return sum / static_cast<double>(r.size());
}

std::string LakeOutput::to_csv() const {
  std::string out = "time";
  for (std::size_t z = 0; z < layers(); ++z) out += ",temp_" + std::to_string(z);
  out.push_back('\n');
  for (std::size_t t = 0; t < temps.size(); ++t) {
    out += timestamps[t];
    for (double v : temps[t]) {
      out.push_back(',');
      out += format_double(v);
    }
    out.push_back('\n');
  }
  return out;
}

LakeOutput LakeOutput::parse_csv(std::string_view csv) {
  auto table = FeatureTable::parse_csv(csv);
  LakeOutput out;
  for (std::size_t c = 1; c < table.header.size(); ++c) {
    if (table.header[c] != "temp_" + std::to_string(c - 1)) {
      throw input("lake output: unexpected column '" + table.header[c] + "'");
    }
  }
  for (const auto& row : table.rows) {
    out.timestamps.push_back(row[0]);
    std::vector<double> temps;
    for (std::size_t c = 1; c < row.size(); ++c) {
      auto v = parse_double(row[c]);
      if (!v) throw input("lake output: non-numeric cell '" + row[c] + "'");
      temps.push_back(*v);
    }
    out.temps.push_back(std::move(temps));
  }
  return out;
}

LakeOutput run_model(const LakeParams& params, const sweep::DriverTable& driver,
                     std::optional<std::int64_t> emulate_ms_override) {
  const auto started = std::chrono::steady_clock::now();
  params.validate();
  if (!driver.has_column(kAirTempColumn)) {
    throw input("driver has no " + std::string(kAirTempColumn) + " column");
  }
  const auto air_col = driver.column_index(kAirTempColumn);

  const auto layers = static_cast<std::size_t>(params.depth_layers);
  std::vector<double> k(layers);
  for (std::size_t z = 0; z < layers; ++z) {
    k[z] = params.k0 * std::exp(-static_cast<double>(z) * params.layer_thickness_m / params.efold_depth_m);
  }

  LakeOutput out;
  out.timestamps.reserve(driver.row_count());
  out.temps.reserve(driver.row_count());
  std::vector<double> state(layers, params.initial_temp_c);
  for (std::size_t t = 0; t < driver.row_count(); ++t) {
    double air = driver.value(t, air_col);
    if (!std::isfinite(air)) {
      throw input("non-finite " + std::string(kAirTempColumn) + " at driver row " + std::to_string(t));
    }
    // lerp is exact at k = 1, returns state unchanged when air == state and
    // never leaves [state, air].
    for (std::size_t z = 0; z < layers; ++z) state[z] = std::lerp(state[z], air, k[z]);
    out.timestamps.push_back(driver.row(t)[0]);
    out.temps.push_back(state);
  }

  auto emulate = emulate_ms_override ? emulate_ms_override : params.emulate_ms;
  if (emulate && *emulate > 0) {
    std::this_thread::sleep_until(started + std::chrono::milliseconds(*emulate));
  }
  return out;
}

std::string FeatureTable::to_csv() const {
  std::string out = join(header, ",");
  out.push_back('\n');
  for (const auto& r : rows) {
    out += join(r, ",");
    out.push_back('\n');
  }
  return out;
}

FeatureTable FeatureTable::parse_csv(std::string_view csv) {
  FeatureTable t;
  for (auto line : split(csv, '\n')) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split(line, ',');
    if (t.header.empty()) {
      t.header = std::move(cells);
      continue;
    }
    if (cells.size() != t.header.size()) throw input("table row has wrong field count");
    t.rows.push_back(std::move(cells));
  }
  if (t.header.empty()) throw input("table has no header");
  return t;
}

FeatureTable FeatureTable::project(const std::vector<std::string>& columns) const {
  std::vector<std::size_t> idx{0};
  for (const auto& c : columns) {
    bool found = false;
    for (std::size_t i = 1; i < header.size(); ++i) {
      if (header[i] == c) {
        idx.push_back(i);
        found = true;
        break;
      }
    }
    if (!found) throw input("unknown output column '" + c + "'");
  }
  FeatureTable out;
  for (auto i : idx) out.header.push_back(header[i]);
  for (const auto& r : rows) {
    std::vector<std::string> cells;
    cells.reserve(idx.size());
    for (auto i : idx) cells.push_back(r[i]);
    out.rows.push_back(std::move(cells));
  }
  return out;
}

std::vector<std::string> available_columns(const LakeOutput& out) {
  std::vector<std::string> cols;
  for (std::size_t z = 0; z < out.layers(); ++z) cols.push_back("temp_" + std::to_string(z));
  cols.insert(cols.end(), {"temp_surface", "temp_bottom", "temp_mean"});
  return cols;
}

FeatureTable extract_features(const LakeOutput& out, const std::vector<std::string>& columns) {
  std::vector<std::string> wanted = columns;
  if (wanted.empty()) {
    for (std::size_t z = 0; z < out.layers(); ++z) wanted.push_back("temp_" + std::to_string(z));
  }

  // Resolve each name to a cell generator before touching rows.
  std::vector<std::function<double(std::size_t)>> getters;
  for (const auto& name : wanted) {
    if (name == "temp_surface") {
      getters.emplace_back([&out](std::size_t r) { return out.surface(r); });
    } else if (name == "temp_bottom") {
      getters.emplace_back([&out](std::size_t r) { return out.bottom(r); });
    } else if (name == "temp_mean") {
      getters.emplace_back([&out](std::size_t r) { return out.column_mean(r); });
    } else if (name.rfind("temp_", 0) == 0) {
      auto z = parse_int(std::string_view(name).substr(5));
      if (!z || *z < 0 || static_cast<std::size_t>(*z) >= out.layers()) {
        throw input("unknown output column '" + name + "'");
      }
      auto layer = static_cast<std::size_t>(*z);
      getters.emplace_back([&out, layer](std::size_t r) { return out.temps[r][layer]; });
    } else {
      throw input("unknown output column '" + name + "'");
    }
  }

  FeatureTable t;
  t.header.push_back("time");
  t.header.insert(t.header.end(), wanted.begin(), wanted.end());
  for (std::size_t r = 0; r < out.temps.size(); ++r) {
    std::vector<std::string> cells{out.timestamps[r]};
    for (const auto& g : getters) cells.push_back(format_double(g(r)));
    t.rows.push_back(std::move(cells));
  }
  return t;
}

}  // namespace lakegrid::model
