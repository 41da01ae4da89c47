#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace reqiv {

// Comma-separated text with a header row. Fields may be double-quoted, with
// "" as an escaped quote. Blank lines are skipped.
struct CsvTable {
  std::string source;  // file name used in diagnostics
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<int> line_of_row;  // 1-based line numbers in the source

  // Index of a header column, or nullopt.
  std::optional<std::size_t> find(std::string_view name) const;
  // Index of a header column; throws ValidationError naming the file if absent.
  std::size_t require(std::string_view name) const;
  // "<source>:<line>: " prefix for diagnostics about row i.
  std::string where(std::size_t i) const;
};

CsvTable read_csv(std::istream& in, const std::string& source);
CsvTable read_csv_file(const std::string& path);

std::string csv_escape(std::string_view field);
void write_csv_row(std::ostream& out, const std::vector<std::string>& fields);

// Shortest decimal text that reads back to the same double; "NA" for NaN.
std::string format_double(double v);
// Fixed-precision rendering for human-facing reports.
std::string format_fixed(double v, int decimals);

// Strict parsers; throw ValidationError with `context` in the message.
double parse_double(std::string_view s, const std::string& context);
long long parse_int(std::string_view s, const std::string& context);
bool parse_bool(std::string_view s, const std::string& context);

}  // namespace reqiv
