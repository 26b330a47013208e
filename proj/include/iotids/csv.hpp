#pragma once

#include <cstddef>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace iotids {

/// One parsed CSV row and the physical line it started on (1-based).
struct CsvRow {
  std::vector<std::string> cells;
  std::size_t line_number = 0;
};

/// Streaming RFC-4180 reader: quoted fields, doubled quotes, embedded
/// delimiters and line breaks, LF or CRLF terminators.
class CsvReader {
 public:
  explicit CsvReader(std::istream& in, char delimiter = ',');

  /// Next row, or std::nullopt at end of input. A trailing empty line is not a row.
  std::optional<CsvRow> next();

  char delimiter() const { return delimiter_; }

 private:
  std::istream& in_;
  char delimiter_;
  std::size_t line_ = 1;
};

class CsvWriter {
 public:
  explicit CsvWriter(std::ostream& out, char delimiter = ',');

  void write_row(std::span<const std::string> cells);
  void write_row(std::initializer_list<std::string> cells) {
    write_row(std::span<const std::string>(cells.begin(), cells.size()));
  }

 private:
  std::ostream& out_;
  char delimiter_;
};

/// Quote a cell if it contains the delimiter, a quote, or a line break.
std::string csv_escape(const std::string& cell, char delimiter = ',');

}  // namespace iotids
