#pragma once

#include "bkt/core/error.hpp"

#include <Eigen/Core>

#include <cerrno>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace bkt::io {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MissingInputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    throw IoError("csv: no column '" + name + "'");
  }
};

/// Comma separated, 17 significant digits, '\n' line endings.
class CsvWriter {
 public:
  explicit CsvWriter(const std::vector<std::string>& header) {
    out_ << std::setprecision(17);
    row_strings(header);
  }

  template <class... Cells>
  CsvWriter& row(const Cells&... cells) {
    bool first = true;
    ((out_ << (first ? "" : ",") << cells, first = false), ...);
    out_ << '\n';
    return *this;
  }

  /// Leading cells, then numeric values.
  template <class Values>
  CsvWriter& row_with(const std::vector<std::string>& lead, const Values& values) {
    bool first = true;
    for (const auto& s : lead) {
      out_ << (first ? "" : ",") << s;
      first = false;
    }
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(values.size()); ++i) {
      out_ << (first ? "" : ",") << values[i];
      first = false;
    }
    out_ << '\n';
    return *this;
  }

  std::string str() const { return out_.str(); }

 private:
  void row_strings(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << '\n';
  }

  std::ostringstream out_;
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << text;
  if (!os) throw IoError("write failed: " + path.string());
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MissingInputError("missing input " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline std::vector<std::string> split(const std::string& line, char sep = ',') {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, sep)) out.push_back(cell);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

inline CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::istringstream ss(text);
  std::string line;
  if (!std::getline(ss, line)) throw IoError("csv: empty file");
  t.header = split(line);
  while (std::getline(ss, line)) {
    if (line.empty()) continue;
    auto cells = split(line);
    if (cells.size() != t.header.size()) throw IoError("csv: ragged row '" + line + "'");
    t.rows.push_back(std::move(cells));
  }
  return t;
}

inline CsvTable read_csv(const std::filesystem::path& path) { return parse_csv(read_text(path)); }

inline double to_double(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) throw IoError("csv: not a number '" + s + "'");
  return v;
}

inline long to_long(const std::string& s) {
  char* end = nullptr;
  const long v = std::strtol(s.c_str(), &end, 10);
  if (s.empty() || end != s.c_str() + s.size()) throw IoError("csv: not an integer '" + s + "'");
  return v;
}

}  // namespace bkt::io
