#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "projektor/ot.hpp"
#include "projektor/predictors.hpp"

namespace projektor {

/// Surrogates fitted at two pilot scales n0 < n1.
struct ScalePair {
  long n0 = 0;
  long n1 = 0;
  PredictorModel model0;
  PredictorModel model1;
  CostSpec cost_spec;

  void validate() const;
};

/// Log-linear line through (log n0, l0) and (log n1, l1), evaluated at
/// target_n. Never clamped.
double project(long n0, long n1, double l0, double l1, long target_n);
double project(const ScalePair& pair, double l0, double l1, long target_n);

/// (l0 - l1) / (log n1 - log n0), sign as written.
double scaling_exponent(const ScalePair& pair, double l0, double l1);

struct DefaultScales {
  long n0;
  long n1;
};
/// n1 = smallest pilot size, n0 = 2/3 n1 rounded half to even.
DefaultScales default_scales(std::span<const std::size_t> pilot_sizes);

double project_query(const ScalePair& pair, const MixingRatio& ratio, long target_n,
                     double ot0, double ot1);

struct ProjectionRow {
  MixingRatio ratio;
  long target_n = 0;
  double predicted = 0.0;
  std::optional<double> actual;
};

void write_projection_csv(const std::string& path, std::span<const ProjectionRow> rows);
std::vector<ProjectionRow> read_projection_csv(const std::string& path);

}  // namespace projektor
