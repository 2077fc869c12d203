#pragma once

#include <charconv>
#include <fstream>
#include <istream>
#include <sstream>
#include <string>
#include <vector>

#include "sgte/core.hpp"

namespace sgte {

/// Maps CSV header names onto the observation fields. An empty covariate
/// list means "every column that is not y, a, s or r, in file order".
struct ColumnMap {
  std::string y = "y";
  std::string a = "a";
  std::string s = "s";
  std::string r = "r";
  std::vector<std::string> covariates;
};

namespace csv_detail {

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

inline double parse_number(const std::string& field, std::size_t line, const std::string& column) {
  std::string_view v = KeyValueConfig::trim(field);
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    if (v == "nan" || v == "NaN" || v == "inf" || v == "-inf" || v == "Inf" || v == "-Inf") {
      return v.front() == '-' ? -std::numeric_limits<double>::infinity()
             : v[0] == 'i' || v[0] == 'I' ? std::numeric_limits<double>::infinity()
                                           : std::numeric_limits<double>::quiet_NaN();
    }
    throw Error(Errc::Schema, "line " + std::to_string(line) + ": column '" + column + "': not a number: '" +
                                  std::string(v) + "'");
  }
  return out;
}

inline int parse_label(const std::string& field, std::size_t line, const std::string& column) {
  const double v = parse_number(field, line, column);
  if (!std::isfinite(v) || v != std::round(v)) {
    throw Error(Errc::Schema, "line " + std::to_string(line) + ": column '" + column + "': expected an integer label");
  }
  return static_cast<int>(v);
}

inline bool is_na(const std::string& field) {
  std::string_view v = KeyValueConfig::trim(field);
  return v.empty() || v == "NA";
}

}  // namespace csv_detail

/// Reads one observation per row and returns the validated dataset.
/// Validation errors cite file line numbers (the header is line 1).
inline Dataset read_dataset_csv(std::istream& in, const ColumnMap& map = {}) {
  using namespace csv_detail;
  std::string line;
  if (!std::getline(in, line)) throw Error(Errc::Schema, "input is empty (no header line)");
  const std::vector<std::string> header = split_line(line);
  auto find = [&](const std::string& name) -> std::size_t {
    for (std::size_t j = 0; j < header.size(); ++j) {
      if (KeyValueConfig::trim(header[j]) == name) return j;
    }
    throw Error(Errc::Schema, "missing required column '" + name + "'");
  };
  const std::size_t cy = find(map.y);
  const std::size_t ca = find(map.a);
  const std::size_t cs = find(map.s);
  const std::size_t cr = find(map.r);
  std::vector<std::size_t> cx;
  std::vector<std::string> names;
  if (map.covariates.empty()) {
    for (std::size_t j = 0; j < header.size(); ++j) {
      if (j == cy || j == ca || j == cs || j == cr) continue;
      cx.push_back(j);
      names.emplace_back(KeyValueConfig::trim(header[j]));
    }
  } else {
    for (const auto& name : map.covariates) {
      cx.push_back(find(name));
      names.push_back(name);
    }
  }

  std::vector<Observation> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (KeyValueConfig::trim(line).empty()) continue;
    const std::vector<std::string> f = split_line(line);
    if (f.size() != header.size()) {
      throw Error(Errc::Schema, "line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                                    " fields, got " + std::to_string(f.size()));
    }
    Observation o;
    if (is_na(f[cr])) throw Error(Errc::Schema, "line " + std::to_string(line_no) + ": column '" + map.r + "' is empty");
    const int r = parse_label(f[cr], line_no, map.r);
    if (r != 0 && r != 1) throw Error(Errc::Schema, "line " + std::to_string(line_no) + ": r must be 0 or 1");
    o.r = r == 1;
    if (!is_na(f[cy])) o.y = parse_number(f[cy], line_no, map.y);
    if (!is_na(f[ca])) o.a = parse_label(f[ca], line_no, map.a);
    if (!is_na(f[cs])) o.s = parse_label(f[cs], line_no, map.s);
    o.x.reserve(cx.size());
    for (std::size_t k = 0; k < cx.size(); ++k) {
      if (is_na(f[cx[k]])) {
        throw Error(Errc::NonFiniteCovariate,
                    "line " + std::to_string(line_no) + ": covariate '" + names[k] + "' is missing");
      }
      o.x.push_back(parse_number(f[cx[k]], line_no, names[k]));
    }
    rows.push_back(std::move(o));
  }
  return validate_dataset(Dataset(rows, names), 2);
}

inline Dataset read_dataset_csv(const std::string& path, const ColumnMap& map = {}) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Schema, "cannot open input file " + path);
  return read_dataset_csv(in, map);
}

/// Writes a dataset in the layout read_dataset_csv expects.
inline void write_dataset_csv(std::ostream& out, const Dataset& d) {
  out << "y,a,s,r";
  for (const auto& n : d.covariate_names()) out << "," << n;
  out << "\n";
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d.in_multisource(i)) {
      out << KeyValueConfig::format_double(d.y(i)) << "," << d.a(i) << "," << d.s(i) << ",1";
    } else {
      out << ",,,0";
    }
    for (double v : d.x(i)) out << "," << KeyValueConfig::format_double(v);
    out << "\n";
  }
}

}  // namespace sgte
