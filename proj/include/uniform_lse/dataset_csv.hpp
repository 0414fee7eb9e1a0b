#pragma once

// Dataset ingestion: a header row naming the columns `x` and `y`, then one
// record per line. Numbers use '.' as the decimal separator; thousands
// separators are rejected. Blank lines are skipped.

#include <charconv>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <istream>
#include <optional>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "uniform_lse/errors.hpp"
#include "uniform_lse/regression.hpp"

namespace uniform_lse {

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) {
    return {};
  }
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start)));
    if (comma == std::string_view::npos) {
      break;
    }
    start = comma + 1;
  }
  return out;
}

inline double parse_decimal(std::string_view field, std::size_t line, std::string_view column) {
  if (field.empty()) {
    throw ParseError(line, "empty value in column '" + std::string(column) + "'");
  }
  std::string_view body = field;
  if (body.front() == '+') {
    body.remove_prefix(1);
  }
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(body.data(), body.data() + body.size(), value);
  if (ec != std::errc{} || ptr != body.data() + body.size()) {
    throw ParseError(line, "cannot parse '" + std::string(field) + "' as a number in column '" +
                               std::string(column) + "'");
  }
  if (!std::isfinite(value)) {
    throw ParseError(line, "non-finite value in column '" + std::string(column) + "'");
  }
  return value;
}

} // namespace detail

/// Reads a dataset; throws ParseError carrying the offending line number.
/// Only the CSV grammar is checked here; call Dataset::validate() or fit()
/// for the regression preconditions.
inline Dataset read_dataset_csv(std::istream &in) {
  std::string line;
  std::size_t line_no = 0;
  std::optional<std::size_t> x_col;
  std::optional<std::size_t> y_col;
  std::size_t columns = 0;

  while (std::getline(in, line)) {
    ++line_no;
    if (!detail::trim(line).empty()) {
      break;
    }
  }
  if (detail::trim(line).empty()) {
    throw ParseError(line_no == 0 ? 1 : line_no, "missing header row 'x,y'");
  }
  const auto header = detail::split_fields(line);
  columns = header.size();
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == "x") {
      x_col = i;
    } else if (header[i] == "y") {
      y_col = i;
    }
  }
  if (!x_col || !y_col) {
    throw ParseError(line_no, std::string("header '") + std::string(detail::trim(line)) +
                                  "' must name columns 'x' and 'y' (missing '" + (x_col ? "y" : "x") + "')");
  }

  Dataset data;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) {
      continue;
    }
    const auto fields = detail::split_fields(line);
    if (fields.size() != columns) {
      throw ParseError(line_no, "expected " + std::to_string(columns) + " fields, found " +
                                    std::to_string(fields.size()));
    }
    data.x.push_back(detail::parse_decimal(fields[*x_col], line_no, "x"));
    data.y.push_back(detail::parse_decimal(fields[*y_col], line_no, "y"));
  }
  return data;
}

inline Dataset read_dataset_csv(const std::string &path) {
  std::ifstream in(path);
  if (!in) {
    throw Error("cannot open '" + path + "'");
  }
  return read_dataset_csv(in);
}

} // namespace uniform_lse
