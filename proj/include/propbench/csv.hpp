#pragma once

#include "propbench/error.hpp"
#include "propbench/json_io.hpp"

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace propbench::csv {

using Row = std::vector<std::string>;

struct Table {
  Row header;
  std::vector<Row> rows;
  std::vector<std::size_t> row_lines; // 1-based source line of each row

  std::ptrdiff_t column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<std::ptrdiff_t>(i);
    return -1;
  }
};

// RFC 4180 reader: quoted fields may contain separators, doubled quotes and
// newlines. The first record is the header.
inline Table parse(std::string_view data) {
  Table table;
  Row row;
  std::string field;
  bool in_quotes = false, field_started = false, any = false;
  std::size_t line = 1, row_start = 1;

  auto end_field = [&] {
    row.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_row = [&] {
    end_field();
    bool blank = row.size() == 1 && row[0].empty();
    if (!blank) {
      if (table.header.empty() && !any) {
        table.header = std::move(row);
      } else {
        table.rows.push_back(std::move(row));
        table.row_lines.push_back(row_start);
      }
      any = true;
    }
    row.clear();
  };

  for (std::size_t i = 0; i < data.size(); ++i) {
    char c = data[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < data.size() && data[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field += c;
      }
      continue;
    }
    if (c == '"' && !field_started && field.empty()) {
      in_quotes = true;
      field_started = true;
    } else if (c == ',') {
      end_field();
    } else if (c == '\r') {
      // swallowed; '\n' terminates the record
    } else if (c == '\n') {
      end_row();
      ++line;
      row_start = line;
    } else {
      field += c;
      field_started = true;
    }
  }
  if (in_quotes) throw ParseError(row_start, "unterminated quoted field");
  if (!field.empty() || !row.empty()) end_row();
  return table;
}

inline Table read(const std::filesystem::path& path) { return parse(read_file(path)); }

inline std::string escape(std::string_view field) {
  if (field.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

inline std::string format_row(const Row& row) {
  std::string out;
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (i) out += ',';
    out += escape(row[i]);
  }
  return out + "\n";
}

} // namespace propbench::csv
