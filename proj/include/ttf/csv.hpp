#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace ttf::csv {

/// Splits one line on commas. No quoting: none of our files need it.
inline std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '\n'))
    s.remove_suffix(1);
  return s;
}

inline bool header_matches(std::string_view line, const std::vector<std::string_view>& expected) {
  const auto cols = split(line);
  if (cols.size() != expected.size()) return false;
  for (std::size_t i = 0; i < cols.size(); ++i)
    if (trim(cols[i]) != expected[i]) return false;
  return true;
}

/// One problem found while reading a row-oriented file.
struct Diagnostic {
  std::size_t line = 0;
  std::string message;
};

}  // namespace ttf::csv
