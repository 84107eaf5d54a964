#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "projektor/dataspace.hpp"

namespace projektor {

using CostMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class FeatureMetric { SquaredEuclidean, Euclidean };

/// Ground cost C(z, z') = metric(x, x') + label_weight * [y != y'].
struct CostSpec {
  FeatureMetric feature_metric = FeatureMetric::SquaredEuclidean;
  double label_weight = 0.0;
};

/// Ten times the median pairwise feature cost between the two sets.
double default_label_weight(const Dataset& train, const Dataset& val,
                            FeatureMetric metric = FeatureMetric::SquaredEuclidean);

CostMatrix cost_matrix(const Dataset& train, const Dataset& val, const CostSpec& spec);

/// Entropic solver settings. Unset epsilons resolve per instance:
/// start = mean cost, final = epsilon_final_ratio * median cost.
struct SinkhornConfig {
  std::optional<double> epsilon_start;
  std::optional<double> epsilon_final;
  double epsilon_final_ratio = 1e-3;
  double anneal_factor = 0.5;
  long max_iters = 200000;
  double tol = 1e-9;  // L1 marginal violation
};

struct TransportResult {
  double cost = 0.0;
  Eigen::VectorXd dual_train;
  Eigen::VectorXd dual_val;
  double epsilon = 0.0;  // 0 for the exact solver
  long iterations = 0;
  std::optional<CostMatrix> coupling;
};

// Marginal weights are probability vectors (sum 1). All solvers fix the
// dual gauge so that <a, f> == <b, g>.
TransportResult sinkhorn(const CostMatrix& cost, const Eigen::VectorXd& a,
                         const Eigen::VectorXd& b, const SinkhornConfig& config = {},
                         bool keep_coupling = false);
TransportResult sinkhorn(const Dataset& train, const Dataset& val, const CostSpec& spec,
                         const SinkhornConfig& config = {});

inline constexpr std::size_t kExactOtMaxEntries = 10000;

/// Exact OT via successive shortest paths on the bipartite transport network.
/// Uniform marginals are solved in integer units, so the optimum is exact up
/// to the final floating-point sum.
TransportResult exact_ot(const CostMatrix& cost, bool keep_coupling = false);
TransportResult exact_ot(const CostMatrix& cost, const Eigen::VectorXd& a,
                         const Eigen::VectorXd& b, bool keep_coupling = false);
TransportResult exact_ot(const Dataset& train, const Dataset& val, const CostSpec& spec);

enum class OtSolver { Auto, Entropic, Exact };

/// Auto picks the exact solver when n*T <= kExactOtMaxEntries.
TransportResult transport(const Dataset& train, const Dataset& val, const CostSpec& spec,
                          const SinkhornConfig& config = {},
                          OtSolver solver = OtSolver::Auto, bool keep_coupling = false);

struct SourceGradient {
  std::vector<double> g;
  std::vector<bool> empty_source;  // n_i == 0; g_i reported as 0
};

/// Source-level calibrated gradient from training-side duals:
///   g_i = (1/n_i) (sum_{j in i} f_j - n_i/(N - n_i) * sum_{k not in i} f_k).
/// Throws DegeneracyError when a single source holds every point.
SourceGradient calibrated_gradient(const TransportResult& result,
                                   std::span<const int> source_index_of, std::size_t m);

/// Per-point masses p_s / n_s for a composed dataset; used to reweight a
/// fixed support when probing OT as a function of the mixture.
Eigen::VectorXd mixture_point_weights(std::span<const int> source_index_of,
                                      std::span<const double> ratio);

void write_transport_csv(const std::string& path, const TransportResult& result);

}  // namespace projektor
