#include "projektor/projection.hpp"

#include <algorithm>
#include <cfenv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "projektor/errors.hpp"

namespace projektor {

void ScalePair::validate() const {
  if (n0 < 1 || n0 >= n1) throw DegeneracyError("scale pair requires 1 <= n0 < n1");
  if (model0.kind != model1.kind) throw ConfigError("scale pair models differ in kind");
  if (model0.m != model1.m) throw DimensionError("scale pair models differ in source count");
}

double project(long n0, long n1, double l0, double l1, long target_n) {
  if (n0 == n1) throw DegeneracyError("projection needs two distinct scales");
  if (n0 < 1 || n1 < 1) throw DegeneracyError("scales must be positive");
  if (target_n < 1) throw DimensionError("target scale must be at least 1");
  const double ln = std::log(static_cast<double>(target_n));
  const double ln0 = std::log(static_cast<double>(n0));
  const double ln1 = std::log(static_cast<double>(n1));
  // Written so that target_n == n0 or n1 zeroes one coefficient exactly.
  return ((ln - ln0) * l1 - (ln - ln1) * l0) / (ln1 - ln0);
}

double project(const ScalePair& pair, double l0, double l1, long target_n) {
  return project(pair.n0, pair.n1, l0, l1, target_n);
}

double scaling_exponent(const ScalePair& pair, double l0, double l1) {
  return (l0 - l1) /
         (std::log(static_cast<double>(pair.n1)) - std::log(static_cast<double>(pair.n0)));
}

DefaultScales default_scales(std::span<const std::size_t> pilot_sizes) {
  if (pilot_sizes.empty()) throw SizeError("no pilot sizes");
  const auto n1 = static_cast<long>(*std::min_element(pilot_sizes.begin(), pilot_sizes.end()));
  const int mode = std::fegetround();
  std::fesetround(FE_TONEAREST);
  const long n0 = std::lrint(2.0 * static_cast<double>(n1) / 3.0);
  std::fesetround(mode);
  if (n0 < 1 || n0 >= n1)
    throw DegeneracyError("smallest pilot of size " + std::to_string(n1) +
                          " is too small for two scales");
  return {n0, n1};
}

double project_query(const ScalePair& pair, const MixingRatio& ratio, long target_n,
                     double ot0, double ot1) {
  const double l0 = predict_performance(pair.model0, ratio, ot0, pair.n0);
  const double l1 = predict_performance(pair.model1, ratio, ot1, pair.n1);
  return project(pair, l0, l1, target_n);
}

void write_projection_csv(const std::string& path, std::span<const ProjectionRow> rows) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path);
  const std::size_t m = rows.empty() ? 0 : rows.front().ratio.size();
  out.precision(17);
  for (std::size_t i = 0; i < m; ++i) out << "ratio_" << i << ',';
  out << "target_n,predicted,actual\n";
  for (const auto& r : rows) {
    if (r.ratio.size() != m) throw DimensionError("projection rows mix source counts");
    for (std::size_t i = 0; i < m; ++i) out << r.ratio[i] << ',';
    out << r.target_n << ',' << r.predicted << ',';
    if (r.actual) out << *r.actual;
    out << '\n';
  }
}

std::vector<ProjectionRow> read_projection_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ": empty file");
  std::size_t columns = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
  if (columns < 3) throw ParseError(path + ": bad header");
  const std::size_t m = columns - 3;
  std::vector<ProjectionRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (cells.size() != columns) throw ParseError(path + ": ragged row");
    try {
      std::vector<double> p(m);
      for (std::size_t i = 0; i < m; ++i) p[i] = std::stod(cells[i]);
      ProjectionRow row{MixingRatio(std::move(p)), std::stol(cells[m]), std::stod(cells[m + 1]),
                        std::nullopt};
      if (!cells[m + 2].empty()) row.actual = std::stod(cells[m + 2]);
      rows.push_back(std::move(row));
    } catch (const std::logic_error&) {
      throw ParseError(path + ": malformed number");
    }
  }
  return rows;
}

}  // namespace projektor
