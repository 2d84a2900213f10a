#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace scaleup::csv {

// A parsed CSV file: header row plus data rows, all fields as strings.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Column index for a header name; throws if absent.
  std::size_t col(std::string_view name) const;
  bool has_col(std::string_view name) const;
};

// Parses RFC-4180-ish CSV: comma-separated, double quotes for fields
// containing commas/quotes/newlines, "" escapes a quote. Header row required.
Table parse(std::string_view text, std::string_view origin = "<string>");

Table read_file(const std::string& path);

// Quotes a field only when needed.
std::string escape(std::string_view field);

std::string to_string(const Table& table);

void write_file(const std::string& path, const Table& table);

}  // namespace scaleup::csv
