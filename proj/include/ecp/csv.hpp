// Copyright 2026 The ecp authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ecp {

// Canonical time formatting: fixed decimal, at least two fractional digits,
// at most six, trailing zeros beyond the second trimmed.
inline std::string format_time(double t) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", t);
  std::string s(buf);
  const auto dot = s.find('.');
  const auto last = s.find_last_not_of('0');
  const auto keep = std::max(last, dot + 2);
  return s.substr(0, keep + 1);
}

// Shortest round-trip representation; used for scores and metric values.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s, const std::string& what) {
  double v = 0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  const auto res = std::from_chars(b, e, v);
  if (res.ec != std::errc{} || res.ptr != e)
    throw std::runtime_error(what + ": not a number: '" + s + "'");
  return v;
}

inline long parse_long(const std::string& s, const std::string& what) {
  long v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw std::runtime_error(what + ": not an integer: '" + s + "'");
  return v;
}

// Splits one CSV row. Double-quoted cells may contain commas; a doubled
// quote inside a quoted cell is an escaped quote.
inline std::vector<std::string> split_csv_row(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cell += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cell += c;
      }
    } else if (c == '"' && cell.empty()) {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(std::move(cell));
      cell.clear();
    } else {
      cell += c;
    }
  }
  if (quoted) throw std::runtime_error("unterminated quote in CSV row");
  cells.push_back(std::move(cell));
  return cells;
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += '"';
  return out;
}

// Reads all lines, tolerating CRLF endings and a missing final newline.
inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open file for writing: " + path);
  return out;
}

}  // namespace ecp
