#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "projektor/dataspace.hpp"

namespace projektor {

enum class PredictorKind { CS, PQ, Linear, PseudoQuadratic, Quadratic, Rational, LOO, Shapley };

std::string_view to_string(PredictorKind kind);
PredictorKind predictor_kind_from_string(std::string_view name);

std::size_t parameter_count(PredictorKind kind, std::size_t m);

/// One observation used to fit a surrogate.
struct TrainingTuple {
  MixingRatio ratio;
  long budget = 0;
  double ot_distance = 0.0;
  double performance = 0.0;
};

/// Fitted surrogate. Parameter layout by kind (m = number of sources):
///   CS               [a1, a0]
///   PQ               [b2(m), b1(m), b0, c2(m), c1(m), c0]
///   Linear/LOO/...   [a(m), b, c]                    a.p + b log N + c
///   PseudoQuadratic  [c2(m), c1(m), c0, b]
///   Quadratic        [c2(m), c1(m), c0, c3(m(m+1)/2), b]   c3 lower-triangular, row-major
///   Rational         [c(m*m) row-major, b]           sum_i 1/(sum_j c_ij p_j) + b log N
struct PredictorModel {
  PredictorKind kind = PredictorKind::CS;
  std::size_t m = 0;
  std::vector<double> params;
  double fit_residual = 0.0;
  bool rank_deficient = false;

  bool operator==(const PredictorModel&) const = default;
};

/// Raw formula value. Rational models return the value in log(1 - accuracy)
/// space; use `predict_performance` for the accuracy scale.
double predict(const PredictorModel& model, const MixingRatio& ratio, double ot_distance,
               long budget);

/// Accuracy-scale prediction (back-transforms Rational). Unclamped.
double predict_performance(const PredictorModel& model, const MixingRatio& ratio,
                           double ot_distance, long budget);

PredictorModel fit_cs(std::span<const TrainingTuple> tuples);
PredictorModel fit_pq(std::span<const TrainingTuple> tuples);

struct RationalFitOptions {
  int starts = 8;
  int max_iters = 300;
  std::uint64_t seed = 0x5eed;
};

/// Any fitted kind (LOO/Shapley excluded: they are built from values).
PredictorModel fit_baseline(PredictorKind kind, std::span<const TrainingTuple> tuples,
                            const RationalFitOptions& rational = {});

// Largest target the Rational transform accepts: accuracy is clamped to this.
inline constexpr double kRationalAccuracyCap = 1.0 - 1e-6;

/// Minimum-norm linear least squares with rank detection. Returned flag is
/// true when the design does not have full column rank.
std::vector<double> least_squares(const Eigen::MatrixXd& design, const Eigen::VectorXd& target,
                                  bool* rank_deficient = nullptr);

/// Regressor row for the kinds that are linear in their parameters.
Eigen::VectorXd design_row(PredictorKind kind, const MixingRatio& ratio, double ot_distance,
                           long budget);

// --- Data-value baselines -------------------------------------------------

/// Utility of a coalition encoded as a bitmask over sources.
using SubsetUtility = std::function<double(std::uint32_t)>;

std::vector<double> loo_values(const SubsetUtility& utility, std::size_t m);

inline constexpr std::size_t kShapleyMaxSources = 12;
std::vector<double> shapley_values(const SubsetUtility& utility, std::size_t m);

struct ValueRatio {
  MixingRatio ratio;
  bool fallback_uniform = false;  // every value was nonpositive
};
ValueRatio selection_ratio_from_values(std::span<const double> values);

/// Linear-form model whose source coefficients are the given data values;
/// slope on log N and intercept are least-squares fitted to `tuples` when
/// any are supplied, zero otherwise.
PredictorModel value_model(PredictorKind kind, std::span<const double> values,
                           std::span<const TrainingTuple> tuples = {});

// --- Serialization ----------------------------------------------------------

nlohmann::json to_json(const PredictorModel& model);
PredictorModel model_from_json(const nlohmann::json& j);
void save_model(const std::string& path, const PredictorModel& model);
PredictorModel load_model(const std::string& path);

}  // namespace projektor
