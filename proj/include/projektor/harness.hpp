#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "projektor/learners.hpp"
#include "projektor/ot.hpp"
#include "projektor/predictors.hpp"
#include "projektor/projection.hpp"
#include "projektor/selection.hpp"

namespace projektor {

// --- Configuration ---------------------------------------------------------

/// Gaussian class-conditional generator. Class c draws around
/// class_means[c] + shift with isotropic noise `std`.
struct GaussianSource {
  std::size_t size = 0;
  std::vector<int> classes;
  std::vector<double> class_weights;  // empty: equal weights
  std::vector<double> shift;          // empty: zero
  double std = 1.0;
  double label_noise = 0.0;
};

struct SourceConfig {
  std::string id;
  std::optional<GaussianSource> gaussian;
  std::optional<std::string> csv;
  std::size_t pilot_size = 0;  // 0: whole source
};

struct SelectionSettings {
  long budget = 0;  // 0: ten times n1
  OptimizerConfig optimizer;
};

struct BudgetSettings {
  double target = 0.0;
  std::vector<long> grid;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::size_t dim = 2;
  int num_classes = 2;
  double mean_scale = 3.0;
  std::optional<FeatureMatrix> class_means;  // explicit table overrides the seeded one

  std::vector<SourceConfig> sources;
  SourceConfig val;

  FeatureMetric metric = FeatureMetric::SquaredEuclidean;
  std::optional<double> label_weight;  // unset: ten times median feature cost
  OtSolver solver = OtSolver::Auto;
  SinkhornConfig sinkhorn;

  LearnerSpec learner;
  std::optional<long> n0, n1;  // unset: derived from pilot sizes
  double grid_resolution = 0.1;  // parse_config: 0.2 when more than three sources
  int replicates = 3;
  std::vector<PredictorKind> predictors{PredictorKind::CS, PredictorKind::PQ};
  std::vector<std::uint64_t> seeds{0};
  std::size_t extrapolation_source = 0;
  double extrapolation_cap = 0.55;
  std::vector<long> projection_targets;
  SelectionSettings selection;
  BudgetSettings budget_search;
  std::vector<std::size_t> efficiency_counts;

  std::string base_dir;  // CSV paths resolve relative to this
};

ExperimentConfig parse_config(const nlohmann::json& j, const std::string& base_dir = {});
ExperimentConfig load_config(const std::string& path);

// --- Data ------------------------------------------------------------------

struct ExperimentData {
  std::vector<Dataset> full;    // whole sources (used for ground truth at large N)
  std::vector<Dataset> pilots;  // revealed subsets
  Dataset val;
};

FeatureMatrix class_means(const ExperimentConfig& config);
Dataset generate_gaussian(const GaussianSource& spec, const FeatureMatrix& means,
                          std::uint64_t seed, std::string id = {});
ExperimentData materialize(const ExperimentConfig& config, std::uint64_t seed);

struct Scales {
  long n0;
  long n1;
};
Scales resolve_scales(const ExperimentConfig& config, const ExperimentData& data);

CostSpec resolve_cost(const ExperimentConfig& config, const ExperimentData& data);

// --- Grid and fitting data -------------------------------------------------

/// Lattice points of the simplex with spacing `resolution`, lexicographic.
std::vector<MixingRatio> grid_ratios(std::size_t m, double resolution);

struct FitDataset {
  long n0 = 0;
  long n1 = 0;
  std::vector<TrainingTuple> tuples0;
  std::vector<TrainingTuple> tuples1;
};

/// Composes every grid ratio at both scales; OT to val and accuracy are both
/// means over the replicate compositions.
FitDataset build_fit_dataset(const ExperimentConfig& config, const ExperimentData& data,
                             std::uint64_t seed);

std::pair<std::vector<TrainingTuple>, std::vector<TrainingTuple>> extrapolation_split(
    std::span<const TrainingTuple> tuples, std::size_t source_index, double cap);

/// Fits both scales of the given kind.
ScalePair fit_scale_pair(PredictorKind kind, const FitDataset& fit, const CostSpec& cost);

// --- Evaluation ------------------------------------------------------------

/// Mean absolute error in percentage points.
double mae_points(std::span<const double> predicted, std::span<const double> actual);

/// MAE of a model's accuracy predictions, clamped to [0,1], on tuples.
double evaluate_mae(const PredictorModel& model, std::span<const TrainingTuple> tuples);

struct PredictorScore {
  PredictorKind kind = PredictorKind::CS;
  bool fitted = false;
  std::string failure;
  double train_mae = 0.0;
  double test_mae = 0.0;
};

std::optional<PredictorModel> try_fit(PredictorKind kind, std::span<const TrainingTuple> train,
                                      std::string* failure = nullptr);

std::vector<PredictorScore> score_predictors(std::span<const PredictorKind> kinds,
                                             std::span<const TrainingTuple> train,
                                             std::span<const TrainingTuple> test);

struct EfficiencyRow {
  std::size_t count = 0;
  PredictorKind kind = PredictorKind::CS;
  bool fitted = false;
  double test_mae = 0.0;
};

/// Fits each kind on a seeded random subset (original order kept) of `train`
/// for every count and scores it on `test`.
std::vector<EfficiencyRow> efficiency_curve(std::span<const PredictorKind> kinds,
                                            std::span<const TrainingTuple> train,
                                            std::span<const TrainingTuple> test,
                                            std::span<const std::size_t> counts,
                                            std::uint64_t seed);

/// Source-coalition utility: accuracy of the learner on a uniform mixture of
/// the coalition's pilots at budget n. The empty coalition scores 0.
SubsetUtility coalition_utility(const ExperimentConfig& config, const ExperimentData& data,
                                long n, std::uint64_t seed);

struct CompareRow {
  PredictorScore score;
  std::optional<MixingRatio> chosen;  // grid argmax of the fitted surrogate
  double chosen_actual = 0.0;
};

std::vector<CompareRow> compare_predictors(const ExperimentConfig& config,
                                           const ExperimentData& data, const FitDataset& fit,
                                           std::uint64_t seed);

// --- CSV -------------------------------------------------------------------

void write_tuples_csv(const std::string& path, std::span<const TrainingTuple> tuples);
std::vector<TrainingTuple> read_tuples_csv(const std::string& path);

/// Worker count from PROJEKTOR_THREADS (0 or unset: hardware concurrency).
unsigned worker_count();
/// Runs body(i) for i in [0, n) across worker threads; rethrows the first
/// exception in index order.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace projektor
