#include "udufact/csv.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace udufact::csv {
namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    const auto first = cell.find_first_not_of(" \t\r");
    const auto last = cell.find_last_not_of(" \t\r");
    cells.push_back(first == std::string::npos ? std::string() : cell.substr(first, last - first + 1));
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

}  // namespace

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

Table read(std::istream& is, bool has_header) {
  Table table;
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto cells = split(line);
    if (has_header && table.header.empty() && rows.empty()) {
      table.header = std::move(cells);
      continue;
    }
    std::vector<double> row;
    row.reserve(cells.size());
    for (const auto& c : cells) {
      char* end = nullptr;
      const double v = std::strtod(c.c_str(), &end);
      require(!c.empty() && end == c.c_str() + c.size(),
              "line " + std::to_string(line_no) + ": cannot parse \"" + c + "\" as a number");
      row.push_back(v);
    }
    require(rows.empty() || row.size() == rows.front().size(),
            "line " + std::to_string(line_no) + ": ragged row");
    rows.push_back(std::move(row));
  }
  const Index ncols = rows.empty() ? static_cast<Index>(table.header.size())
                                   : static_cast<Index>(rows.front().size());
  require(table.header.empty() || static_cast<Index>(table.header.size()) == ncols,
          "header width does not match data width");
  table.values.resize(static_cast<Index>(rows.size()), ncols);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (Index j = 0; j < ncols; ++j) table.values(static_cast<Index>(i), j) = rows[i][j];
  return table;
}

Table read_file(const std::string& path, bool has_header) {
  std::ifstream in(path);
  require(in.good(), "cannot open " + path);
  return read(in, has_header);
}

void write(std::ostream& os, const Matrix& m, const std::vector<std::string>& header) {
  for (std::size_t j = 0; j < header.size(); ++j) os << (j ? "," : "") << header[j];
  if (!header.empty()) os << '\n';
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) os << (j ? "," : "") << format_double(m(i, j));
    os << '\n';
  }
}

}  // namespace udufact::csv
