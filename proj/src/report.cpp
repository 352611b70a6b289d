#include "portdec/report.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace portdec {

void Series::add(std::string column, std::vector<double> v) {
  if (!values.empty() && v.size() != values.front().size()) {
    throw std::invalid_argument("series '" + name + "': column '" + column + "' has the wrong length");
  }
  columns.push_back(std::move(column));
  values.push_back(std::move(v));
}

std::size_t Series::rows() const { return values.empty() ? 0 : values.front().size(); }

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", v == 0.0 ? 0.0 : v);  // folds -0
  return buf;
}

std::string to_csv(const Series& s) {
  std::string out;
  for (std::size_t c = 0; c < s.columns.size(); ++c) out += (c ? "," : "") + s.columns[c];
  out += '\n';
  for (std::size_t r = 0; r < s.rows(); ++r) {
    for (std::size_t c = 0; c < s.columns.size(); ++c) out += (c ? "," : "") + format_number(s.values[c][r]);
    out += '\n';
  }
  return out;
}

namespace {

void write_text(const std::string& dir, const std::string& file, const std::string& text) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path path = std::filesystem::path(dir) / file;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

}  // namespace

void write_series(const std::string& dir, const Series& s) { write_text(dir, s.name + ".csv", to_csv(s)); }

void write_json(const std::string& dir, const std::string& file, const Json& j) {
  write_text(dir, file, j.dump(2) + "\n");
}

Json number_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

}  // namespace portdec
