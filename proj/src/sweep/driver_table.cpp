#include "lakegrid/sweep/driver_table.hpp"

#include "lakegrid/common/error.hpp"
#include "lakegrid/common/kv.hpp"

namespace lakegrid::sweep {

namespace {

// Timestamps compare numerically when both parse as numbers, otherwise as
// text (ISO 8601 stamps order lexically).
bool strictly_before(const std::string& a, const std::string& b) {
  auto na = parse_double(a);
  auto nb = parse_double(b);
  if (na && nb) return *na < *nb;
  return a < b;
}

}  // namespace

DriverTable DriverTable::parse(std::string_view csv, std::string_view file_name) {
  auto fail = [&](const std::string& what) {
    return Error(ErrorKind::Input, std::string(file_name) + ": " + what);
  };

  DriverTable t;
  auto lines = split(csv, '\n');
  std::size_t line_no = 0;
  for (auto& line : lines) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      // Only trailing blank lines are tolerated.
      bool rest_blank = true;
      for (std::size_t j = line_no; j < lines.size(); ++j) {
        if (!trim(lines[j]).empty()) rest_blank = false;
      }
      if (rest_blank) break;
      throw fail("blank line " + std::to_string(line_no));
    }
    auto cells = split(line, ',');
    if (t.header_.empty()) {
      for (const auto& c : cells) {
        if (trim(c).empty()) throw fail("empty column name in header");
      }
      t.header_ = std::move(cells);
      continue;
    }
    if (cells.size() != t.header_.size()) {
      throw fail("line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                 " fields, expected " + std::to_string(t.header_.size()));
    }
    for (std::size_t c = 1; c < cells.size(); ++c) {
      if (!parse_double(trim(cells[c]))) {
        throw fail("line " + std::to_string(line_no) + " column '" + t.header_[c] +
                   "' is not numeric: '" + cells[c] + "'");
      }
    }
    if (!t.rows_.empty() && !strictly_before(t.rows_.back()[0], cells[0])) {
      throw fail("timestamps not strictly increasing at line " + std::to_string(line_no));
    }
    t.rows_.push_back(std::move(cells));
  }
  if (t.header_.empty()) throw fail("missing header row");
  return t;
}

std::string DriverTable::to_csv() const {
  std::string out = join(header_, ",");
  out.push_back('\n');
  for (const auto& r : rows_) {
    out += join(r, ",");
    out.push_back('\n');
  }
  return out;
}

bool DriverTable::has_column(std::string_view name) const {
  for (const auto& h : header_) {
    if (h == name) return true;
  }
  return false;
}

std::size_t DriverTable::column_index(std::string_view name) const {
  for (std::size_t i = 0; i < header_.size(); ++i) {
    if (header_[i] == name) return i;
  }
  throw Error(ErrorKind::InvalidSpec, "unknown column '" + std::string(name) + "'");
}

double DriverTable::value(std::size_t row, std::size_t column) const {
  auto v = parse_double(trim(rows_.at(row).at(column)));
  if (!v) throw Error(ErrorKind::Input, "non-numeric cell at row " + std::to_string(row));
  return *v;
}

std::vector<double> DriverTable::column_values(std::string_view name) const {
  auto c = column_index(name);
  std::vector<double> out;
  out.reserve(rows_.size());
  for (std::size_t r = 0; r < rows_.size(); ++r) out.push_back(value(r, c));
  return out;
}

void DriverTable::set_cell(std::size_t row, std::size_t column, std::string text) {
  rows_.at(row).at(column) = std::move(text);
}

}  // namespace lakegrid::sweep
