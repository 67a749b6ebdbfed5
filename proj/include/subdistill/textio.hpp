#pragma once

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "subdistill/errors.hpp"

namespace subdistill {

// Shortest-faithful float formatting (%.17g trimmed): identical inputs give
// identical bytes, and parsing the text recovers the exact double.
inline std::string fmt_double(double v) {
  char buf[40];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    double back = 0.0;
    std::sscanf(buf, "%lf", &back);
    if (back == v) break;
  }
  return buf;
}

inline std::string csv_join(const std::vector<std::string>& cells) {
  std::string line;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) line += ',';
    line += cells[i];
  }
  return line;
}

void write_text_file(const std::filesystem::path& path, const std::string& body);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace subdistill
