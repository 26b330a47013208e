#include "iotids/csv.hpp"

#include "iotids/error.hpp"

#include <fmt/core.h>

namespace iotids {

CsvReader::CsvReader(std::istream& in, char delimiter) : in_(in), delimiter_(delimiter) {}

std::optional<CsvRow> CsvReader::next() {
  std::streambuf* buf = in_.rdbuf();
  using Traits = std::streambuf::traits_type;
  if (Traits::eq_int_type(buf->sgetc(), Traits::eof())) return std::nullopt;

  CsvRow row;
  row.line_number = line_;
  std::string cell;
  bool in_quotes = false;
  bool cell_was_quoted = false;

  for (;;) {
    const auto ch = buf->sbumpc();
    if (Traits::eq_int_type(ch, Traits::eof())) {
      if (in_quotes) {
        throw DataError(fmt::format("unterminated quoted field starting on line {}", row.line_number));
      }
      row.cells.push_back(std::move(cell));
      break;
    }
    const char c = Traits::to_char_type(ch);
    if (in_quotes) {
      if (c == '"') {
        if (Traits::eq_int_type(buf->sgetc(), Traits::to_int_type('"'))) {
          buf->sbumpc();
          cell.push_back('"');
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line_;
        cell.push_back(c);
      }
      continue;
    }
    if (c == delimiter_) {
      row.cells.push_back(std::move(cell));
      cell.clear();
      cell_was_quoted = false;
    } else if (c == '"' && cell.empty() && !cell_was_quoted) {
      in_quotes = true;
      cell_was_quoted = true;
    } else if (c == '\r') {
      if (Traits::eq_int_type(buf->sgetc(), Traits::to_int_type('\n'))) buf->sbumpc();
      ++line_;
      row.cells.push_back(std::move(cell));
      break;
    } else if (c == '\n') {
      ++line_;
      row.cells.push_back(std::move(cell));
      break;
    } else {
      cell.push_back(c);
    }
  }
  return row;
}

std::string csv_escape(const std::string& cell, char delimiter) {
  if (cell.find_first_of(std::string{delimiter, '"', '\n', '\r'}) == std::string::npos) return cell;
  std::string quoted = "\"";
  for (char c : cell) {
    if (c == '"') quoted.push_back('"');
    quoted.push_back(c);
  }
  quoted.push_back('"');
  return quoted;
}

CsvWriter::CsvWriter(std::ostream& out, char delimiter) : out_(out), delimiter_(delimiter) {}

void CsvWriter::write_row(std::span<const std::string> cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i > 0) out_.put(delimiter_);
    out_ << csv_escape(cells[i], delimiter_);
  }
  out_.put('\n');
}

}  // namespace iotids
