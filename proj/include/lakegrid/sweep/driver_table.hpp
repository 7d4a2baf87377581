#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace lakegrid::sweep {

/// Time-series driver file: a header row whose first column is the
/// timestamp, then one row per time step. Cells keep their original text so
/// columns that are not rewritten stay byte-identical.
class DriverTable {
 public:
  // Throws Error(Input) prefixed with `file_name` on malformed input.
  static DriverTable parse(std::string_view csv, std::string_view file_name = "driver");

  std::string to_csv() const;

  const std::vector<std::string>& header() const { return header_; }
  std::size_t row_count() const { return rows_.size(); }
  const std::vector<std::string>& row(std::size_t i) const { return rows_.at(i); }

  bool has_column(std::string_view name) const;
  // Throws Error(InvalidSpec) for unknown columns.
  std::size_t column_index(std::string_view name) const;

  double value(std::size_t row, std::size_t column) const;
  std::vector<double> column_values(std::string_view name) const;
  void set_cell(std::size_t row, std::size_t column, std::string text);

  bool operator==(const DriverTable&) const = default;

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

}  // namespace lakegrid::sweep
