#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace geoembed::csv {

using Row = std::vector<std::string>;

struct Table {
  Row header;
  std::vector<Row> rows;
};

/// Comma-separated text with a header row. Fields may be double-quoted.
Table read(const std::filesystem::path& path);
Table parse(std::string_view text);
Row split_line(std::string_view line);

std::string join(const Row& fields);
void write(const std::filesystem::path& path, const Table& table);

/// Shortest text that parses back to the identical double.
std::string format_double(double value);
double parse_double(std::string_view text);

}  // namespace geoembed::csv
