#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace percept::csv {

struct Row {
  std::size_t line = 0;  // 1-based line in the source file
  std::vector<std::string> fields;
};

struct Table {
  std::vector<std::string> header;
  std::vector<Row> rows;

  /// Index of a header column, or throws ParseError.
  std::size_t column(std::string_view name) const;
  bool has_column(std::string_view name) const;
};

/// Splits one line on commas. No quoting: ids and numbers never contain commas.
std::vector<std::string> split(std::string_view line);

/// Reads a whole file. Blank lines are skipped; a trailing '\r' is stripped.
Table read(const std::filesystem::path& path);
Table parse(std::istream& in);

double to_double(const std::string& field, std::size_t line);
long long to_int(const std::string& field, std::size_t line);

/// Shortest decimal representation that round-trips.
std::string format_double(double v);
/// Fixed-point with the given number of decimals.
std::string format_fixed(double v, int decimals);

/// Writes `contents` to `path` via a temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::string read_file(const std::filesystem::path& path);

}  // namespace percept::csv
