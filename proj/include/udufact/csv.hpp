#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "udufact/types.hpp"

namespace udufact::csv {

/// Shortest-round-trip-safe text form ("%.17g"); "nan"/"inf" for non-finite.
std::string format_double(double x);

/// Numeric table with an optional header row.
struct Table {
  std::vector<std::string> header;
  Matrix values;
};

/// Reads comma-separated numbers. When `has_header` the first line is kept as
/// column names. Throws ArgumentError on ragged rows or unparsable cells.
Table read(std::istream& is, bool has_header);
Table read_file(const std::string& path, bool has_header);

/// Writes `m` with an optional header line.
void write(std::ostream& os, const Matrix& m, const std::vector<std::string>& header = {});

}  // namespace udufact::csv
