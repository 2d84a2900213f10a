#include "scaleup/csv.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>

namespace scaleup::csv {

std::size_t Table::col(std::string_view name) const {
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (header[j] == name) return j;
  }
  throw std::runtime_error(fmt::format("csv: missing required column '{}'", name));
}

bool Table::has_col(std::string_view name) const {
  for (const auto& h : header) {
    if (h == name) return true;
  }
  return false;
}

namespace {

// Parses one record starting at pos; advances pos past the record's
// terminating newline. Returns false at end of input.
bool parse_record(std::string_view text, std::size_t& pos, std::vector<std::string>& out,
                  std::size_t line_no, std::string_view origin) {
  out.clear();
  if (pos >= text.size()) return false;
  std::string field;
  bool in_quotes = false;
  bool any = false;
  while (pos < text.size()) {
    char c = text[pos];
    if (in_quotes) {
      if (c == '"') {
        if (pos + 1 < text.size() && text[pos + 1] == '"') {
          field.push_back('"');
          pos += 2;
        } else {
          in_quotes = false;
          ++pos;
        }
      } else {
        field.push_back(c);
        ++pos;
      }
      continue;
    }
    if (c == '"') {
      if (!field.empty()) {
        throw std::runtime_error(
            fmt::format("{}:{}: quote inside unquoted field", origin, line_no));
      }
      in_quotes = true;
      any = true;
      ++pos;
    } else if (c == ',') {
      out.push_back(std::move(field));
      field.clear();
      any = true;
      ++pos;
    } else if (c == '\r' || c == '\n') {
      if (c == '\r' && pos + 1 < text.size() && text[pos + 1] == '\n') ++pos;
      ++pos;
      out.push_back(std::move(field));
      return true;
    } else {
      field.push_back(c);
      any = true;
      ++pos;
    }
  }
  if (in_quotes) {
    throw std::runtime_error(fmt::format("{}:{}: unterminated quoted field", origin, line_no));
  }
  if (!any && out.empty()) return false;
  out.push_back(std::move(field));
  return true;
}

}  // namespace

Table parse(std::string_view text, std::string_view origin) {
  Table table;
  std::size_t pos = 0;
  std::size_t line_no = 1;
  if (!parse_record(text, pos, table.header, line_no, origin)) {
    throw std::runtime_error(fmt::format("{}: empty file, header row required", origin));
  }
  std::vector<std::string> row;
  while (true) {
    ++line_no;
    if (!parse_record(text, pos, row, line_no, origin)) break;
    if (row.size() == 1 && row[0].empty()) continue;  // blank line
    if (row.size() != table.header.size()) {
      throw std::runtime_error(fmt::format("{}:{}: expected {} fields, got {}", origin, line_no,
                                           table.header.size(), row.size()));
    }
    table.rows.push_back(row);
  }
  return table;
}

Table read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(fmt::format("cannot open '{}'", path));
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path);
}

std::string escape(std::string_view field) {
  bool needs = field.find_first_of(",\"\r\n") != std::string_view::npos;
  if (!needs) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out.push_back('"');
  return out;
}

std::string to_string(const Table& table) {
  std::string out;
  auto append_row = [&out](const std::vector<std::string>& row) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (j) out.push_back(',');
      out += escape(row[j]);
    }
    out.push_back('\n');
  };
  append_row(table.header);
  for (const auto& row : table.rows) append_row(row);
  return out;
}

void write_file(const std::string& path, const Table& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(fmt::format("cannot write '{}'", path));
  out << to_string(table);
}

}  // namespace scaleup::csv
