#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "projektor/ot.hpp"
#include "projektor/projection.hpp"

namespace projektor {

struct ObjectivePoint {
  double value = 0.0;
  std::vector<double> gradient;  // d value / d p, one entry per source
};

/// Something the optimizer can ascend. `budget` is the target scale N.
class Objective {
 public:
  virtual ~Objective() = default;
  virtual std::size_t sources() const = 0;
  virtual ObjectivePoint evaluate(const MixingRatio& ratio, long budget) = 0;
};

/// d L / d p for one fitted surrogate given the OT value and its calibrated
/// gradient at that ratio. PQ follows the published per-source formula.
/// `budget` only matters for Rational, whose accuracy scale depends on N.
std::vector<double> model_ratio_gradient(const PredictorModel& model, const MixingRatio& ratio,
                                         double ot_distance, std::span<const double> ot_gradient,
                                         long budget);

/// Projected surrogate objective over freshly composed pilot subsets. The
/// composition seed is fixed per instance so the objective is deterministic.
class ProjectedObjective final : public Objective {
 public:
  ProjectedObjective(ScalePair pair, std::vector<Dataset> pilots, Dataset val,
                     std::uint64_t seed, SinkhornConfig sinkhorn = {},
                     OtSolver solver = OtSolver::Auto);

  std::size_t sources() const override { return pilots_.size(); }
  ObjectivePoint evaluate(const MixingRatio& ratio, long budget) override;

  /// The composition used at scale index 0 (n0) or 1 (n1).
  Dataset compose_at(const MixingRatio& ratio, int scale) const;
  const ScalePair& pair() const { return pair_; }
  const Dataset& val() const { return val_; }
  const SinkhornConfig& sinkhorn() const { return sinkhorn_; }
  OtSolver solver() const { return solver_; }

 private:
  ScalePair pair_;
  std::vector<Dataset> pilots_;
  Dataset val_;
  std::uint64_t seed_;
  SinkhornConfig sinkhorn_;
  OtSolver solver_;
};

std::vector<double> objective_gradient(const ScalePair& pair, const MixingRatio& ratio,
                                       long target_n, std::span<const Dataset> pilots,
                                       const Dataset& val, std::uint64_t seed = 0);

struct RobbinsMonro {
  std::optional<double> c;  // unset: 0.1 / (initial gradient L-inf norm + 1e-12)
};
struct ConstantStep {
  double d = 0.1;
};

struct OptimizerConfig {
  std::variant<RobbinsMonro, ConstantStep> step = RobbinsMonro{};
  int max_iters = 500;
  double converge_tol = 1e-7;  // L-inf change in p
  std::uint64_t seed = 0;
  std::optional<MixingRatio> init;  // uniform when unset
};

struct TrajectoryRecord {
  int iter = 0;
  MixingRatio ratio;
  double objective = 0.0;
  bool clipped = false;  // clipping fired on the step that produced this iterate
};

struct SelectionResult {
  MixingRatio ratio;
  double predicted_performance = 0.0;
  std::vector<TrajectoryRecord> trajectory;
  bool converged = false;
  int iterations = 0;
  // Ascent stopped because an iterate could not be composed or its gradient
  // was undefined (a single source holding the whole budget).
  bool stopped_early = false;
};

SelectionResult ascend(Objective& objective, long budget, const OptimizerConfig& config);

SelectionResult select_fixed_budget(const ScalePair& pair, long budget,
                                    std::span<const Dataset> pilots, const Dataset& val,
                                    const OptimizerConfig& config);

struct BudgetSearchConfig {
  double target = 0.0;
  std::vector<long> n_grid;
  OptimizerConfig inner;
};

/// Smallest grid budget whose optimized prediction reaches the target; each
/// budget warm-starts from the previous optimum.
std::pair<long, SelectionResult> search_min_budget(Objective& objective,
                                                   const BudgetSearchConfig& config);
std::pair<long, SelectionResult> search_min_budget(const ScalePair& pair,
                                                   std::span<const Dataset> pilots,
                                                   const Dataset& val,
                                                   const BudgetSearchConfig& config);

void write_trajectory_csv(const std::string& path, const SelectionResult& result);
nlohmann::json to_json(const SelectionResult& result);

}  // namespace projektor
