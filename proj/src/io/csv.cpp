#include "reqiv/csv.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

#include "reqiv/error.hpp"

namespace reqiv {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_record(const std::string& line, const std::string& where) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  bool was_quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
      was_quoted = true;
    } else if (c == ',') {
      out.push_back(was_quoted ? field : trim(field));
      field.clear();
      was_quoted = false;
    } else {
      field += c;
    }
  }
  if (quoted) throw ValidationError(where + "unterminated quoted field");
  out.push_back(was_quoted ? field : trim(field));
  return out;
}

}  // namespace

std::optional<std::size_t> CsvTable::find(std::string_view name) const {
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (header[j] == name) return j;
  }
  return std::nullopt;
}

std::size_t CsvTable::require(std::string_view name) const {
  if (auto j = find(name)) return *j;
  throw ValidationError(source + ": missing required column '" + std::string(name) + "'");
}

std::string CsvTable::where(std::size_t i) const {
  return source + ":" + std::to_string(line_of_row.at(i)) + ": ";
}

CsvTable read_csv(std::istream& in, const std::string& source) {
  CsvTable t;
  t.source = source;
  std::string line;
  int line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const std::string where = source + ":" + std::to_string(line_no) + ": ";
    auto fields = split_record(line, where);
    if (!have_header) {
      t.header = std::move(fields);
      have_header = true;
      continue;
    }
    // Trailing empty fields may be omitted.
    if (fields.size() > t.header.size()) {
      for (std::size_t j = t.header.size(); j < fields.size(); ++j) {
        if (!fields[j].empty()) {
          throw ValidationError(where + "expected " + std::to_string(t.header.size()) +
                                " fields, found " + std::to_string(fields.size()));
        }
      }
    }
    fields.resize(t.header.size());
    t.rows.push_back(std::move(fields));
    t.line_of_row.push_back(line_no);
  }
  if (!have_header) throw ValidationError(source + ": empty file (no header row)");
  return t;
}

CsvTable read_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  return read_csv(in, path);
}

std::string csv_escape(std::string_view field) {
  if (field.find_first_of(",\"\n") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

void write_csv_row(std::ostream& out, const std::vector<std::string>& fields) {
  for (std::size_t j = 0; j < fields.size(); ++j) {
    if (j) out << ',';
    out << csv_escape(fields[j]);
  }
  out << '\n';
}

std::string format_double(double v) {
  if (std::isnan(v)) return "NA";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (v == 0.0) return "0";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string format_fixed(double v, int decimals) {
  if (std::isnan(v)) return "NA";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, decimals);
  std::string s(buf, res.ptr);
  // Avoid "-0.000".
  if (s.front() == '-' && s.find_first_not_of("-0.") == std::string::npos) s.erase(0, 1);
  return s;
}

double parse_double(std::string_view s, const std::string& context) {
  if (s == "NA" || s == "nan" || s == "NaN") return std::nan("");
  if (s == "inf") return INFINITY;
  if (s == "-inf") return -INFINITY;
  double v = 0.0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  if (!s.empty() && *b == '+') ++b;
  auto res = std::from_chars(b, e, v);
  if (s.empty() || res.ec != std::errc() || res.ptr != e) {
    throw ValidationError(context + "not a number: '" + std::string(s) + "'");
  }
  return v;
}

long long parse_int(std::string_view s, const std::string& context) {
  long long v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ValidationError(context + "not an integer: '" + std::string(s) + "'");
  }
  return v;
}

bool parse_bool(std::string_view s, const std::string& context) {
  if (s == "1" || s == "true" || s == "TRUE" || s == "yes") return true;
  if (s.empty() || s == "0" || s == "false" || s == "FALSE" || s == "no") return false;
  throw ValidationError(context + "not a boolean: '" + std::string(s) + "'");
}

}  // namespace reqiv
