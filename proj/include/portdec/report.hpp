#pragma once

// CSV series and summary.json emission. Formatting is fixed so reruns are byte-identical.

#include <string>
#include <vector>

#include "json.hpp"

namespace portdec {

using Json = nlohmann::ordered_json;

/// One CSV file: a header row, then one row per grid node.
struct Series {
  std::string name;  // file stem
  std::vector<std::string> columns;
  std::vector<std::vector<double>> values;  // values[column][row]

  void add(std::string column, std::vector<double> v);
  std::size_t rows() const;
};

/// Numbers as %.12g; non-finite values as nan / inf / -inf.
std::string format_number(double v);

std::string to_csv(const Series& s);

void write_series(const std::string& dir, const Series& s);
void write_json(const std::string& dir, const std::string& file, const Json& j);

/// Finite doubles as numbers, everything else as null.
Json number_or_null(double v);

}  // namespace portdec
