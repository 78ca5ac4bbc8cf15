#pragma once

// Minimal RFC 4180 writer: header on the first row, comma separated, '.' decimal
// separator, 17 significant digits so values round-trip.

#include <cmath>
#include <fstream>
#include <locale>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "vhi/errors.hpp"

namespace vhi::csv {

inline std::string format(double v) {
  if (std::isnan(v)) return "";
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os.precision(17);
  os << v;
  return os.str();
}

inline std::string quote(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

class Table {
 public:
  explicit Table(std::vector<std::string> header) : header_(std::move(header)) {}

  void add_row(std::vector<std::string> cells) {
    if (cells.size() != header_.size()) throw Error(ErrorCode::DimensionMismatch, "csv row width differs from header");
    rows_.push_back(std::move(cells));
  }
  void add_row(const std::vector<double>& values) {
    std::vector<std::string> cells;
    for (double v : values) cells.push_back(format(v));
    add_row(std::move(cells));
  }
  void write(std::ostream& os) const {
    write_line(os, header_);
    for (const auto& r : rows_) write_line(os, r);
  }
  std::string str() const {
    std::ostringstream os;
    write(os);
    return os.str();
  }
  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorCode::InvalidArgument, "cannot open " + path + " for writing");
    write(f);
  }

  const std::vector<std::vector<std::string>>& rows() const noexcept { return rows_; }

 private:
  static void write_line(std::ostream& os, const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) os << ',';
      os << quote(cells[i]);
    }
    os << "\r\n";
  }

  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

}  // namespace vhi::csv
