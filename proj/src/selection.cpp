#include "projektor/selection.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "projektor/errors.hpp"

namespace projektor {

std::vector<double> model_ratio_gradient(const PredictorModel& model, const MixingRatio& ratio,
                                         double ot, std::span<const double> dot,
                                         long budget) {
  const std::size_t m = model.m;
  if (ratio.size() != m || dot.size() != m)
    throw DimensionError("gradient inputs do not match the model's source count");
  const auto& w = model.params;
  std::vector<double> g(m, 0.0);
  switch (model.kind) {
    case PredictorKind::CS:
      for (std::size_t i = 0; i < m; ++i) g[i] = w[0] * dot[i];
      break;
    case PredictorKind::PQ: {
      // [b2(m), b1(m), b0, c2(m), c1(m), c0]
      const double b0 = w[2 * m];
      for (std::size_t i = 0; i < m; ++i) {
        const double p = ratio[i];
        const double b2 = w[i], b1 = w[m + i], c2 = w[2 * m + 1 + i], c1 = w[3 * m + 1 + i];
        g[i] = (b2 * p * p + b1 * p + b0) * dot[i] + (2.0 * b2 * p + b1) * ot + 2.0 * c2 * p + c1;
      }
      break;
    }
    case PredictorKind::Linear:
    case PredictorKind::LOO:
    case PredictorKind::Shapley:
      for (std::size_t i = 0; i < m; ++i) g[i] = w[i];
      break;
    case PredictorKind::PseudoQuadratic:
    case PredictorKind::Quadratic: {
      for (std::size_t i = 0; i < m; ++i) g[i] = 2.0 * w[i] * ratio[i] + w[m + i];
      if (model.kind == PredictorKind::Quadratic) {
        std::size_t at = 2 * m + 1;
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j <= i; ++j, ++at) {
            g[i] += w[at] * ratio[j];
            g[j] += w[at] * ratio[i];
          }
      }
      break;
    }
    case PredictorKind::Rational: {
      // Accuracy scale 1 - exp(raw), so d/dp = -exp(raw) * d raw/dp.
      const double scale = -std::exp(predict(model, ratio, ot, budget));
      for (std::size_t i = 0; i < m; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < m; ++j) s += w[i * m + j] * ratio[j];
        for (std::size_t j = 0; j < m; ++j) g[j] -= scale * w[i * m + j] / (s * s);
      }
      break;
    }
  }
  return g;
}

ProjectedObjective::ProjectedObjective(ScalePair pair, std::vector<Dataset> pilots, Dataset val,
                                       std::uint64_t seed, SinkhornConfig sinkhorn,
                                       OtSolver solver)
    : pair_(std::move(pair)),
      pilots_(std::move(pilots)),
      val_(std::move(val)),
      seed_(seed),
      sinkhorn_(sinkhorn),
      solver_(solver) {
  pair_.validate();
  if (pilots_.size() != pair_.model0.m)
    throw DimensionError("number of pilot datasets does not match the models");
}

Dataset ProjectedObjective::compose_at(const MixingRatio& ratio, int scale) const {
  const long n = scale == 0 ? pair_.n0 : pair_.n1;
  return compose(pilots_, MixtureSpec{static_cast<std::size_t>(n), ratio,
                                      mix_seed(seed_, static_cast<std::uint64_t>(scale))});
}

ObjectivePoint ProjectedObjective::evaluate(const MixingRatio& ratio, long budget) {
  double l[2];
  std::vector<double> g[2];
  for (int s = 0; s < 2; ++s) {
    const Dataset train = compose_at(ratio, s);
    const TransportResult ot = transport(train, val_, pair_.cost_spec, sinkhorn_, solver_);
    const auto& model = s == 0 ? pair_.model0 : pair_.model1;
    const long n = s == 0 ? pair_.n0 : pair_.n1;
    l[s] = predict_performance(model, ratio, ot.cost, n);
    const SourceGradient dot = calibrated_gradient(ot, train.source_of, ratio.size());
    g[s] = model_ratio_gradient(model, ratio, ot.cost, dot.g, n);
  }
  ObjectivePoint out;
  out.value = project(pair_, l[0], l[1], budget);
  out.gradient.resize(ratio.size());
  // The projection is linear in (l0, l1), so gradients combine the same way.
  for (std::size_t i = 0; i < ratio.size(); ++i)
    out.gradient[i] = project(pair_, g[0][i], g[1][i], budget);
  return out;
}

std::vector<double> objective_gradient(const ScalePair& pair, const MixingRatio& ratio,
                                       long target_n, std::span<const Dataset> pilots,
                                       const Dataset& val, std::uint64_t seed) {
  ProjectedObjective obj(pair, {pilots.begin(), pilots.end()}, val, seed);
  return obj.evaluate(ratio, target_n).gradient;
}

SelectionResult ascend(Objective& objective, long budget, const OptimizerConfig& config) {
  const std::size_t m = objective.sources();
  if (m == 0) throw DimensionError("objective has no sources");
  if (config.max_iters < 0) throw ConfigError("max_iters must be nonnegative");
  MixingRatio p = config.init ? *config.init : MixingRatio::uniform(m);
  if (p.size() != m) throw DimensionError("initial ratio has the wrong length");

  SelectionResult res;
  double best = -std::numeric_limits<double>::infinity();
  std::optional<double> rm_c;
  if (const auto* rm = std::get_if<RobbinsMonro>(&config.step)) rm_c = rm->c;
  bool clipped = false;

  for (int t = 0;; ++t) {
    ObjectivePoint pt;
    try {
      pt = objective.evaluate(p, budget);
    } catch (const DegeneracyError&) {
      if (res.trajectory.empty()) throw;
      res.stopped_early = true;
      break;
    } catch (const InsufficientDataError& e) {
      if (res.trajectory.empty())
        throw FeasibilityError(std::string("initial mixture cannot be composed: ") + e.what());
      res.stopped_early = true;
      break;
    }
    if (!std::isfinite(pt.value)) throw NumericError("objective is not finite");
    res.trajectory.push_back({t, p, pt.value, clipped});
    res.iterations = t;
    if (pt.value > best) {
      best = pt.value;
      res.ratio = p;
      res.predicted_performance = pt.value;
    }
    if (res.converged || t >= config.max_iters) break;

    // Restrict the step to the tangent space of the simplex.
    std::vector<double> g = pt.gradient;
    if (g.size() != m) throw DimensionError("objective gradient has the wrong length");
    double mean = 0.0;
    for (double v : g) mean += v;
    mean /= static_cast<double>(m);
    double gmax = 0.0, graw = 0.0;
    for (double& v : g) {
      graw = std::max(graw, std::abs(v));
      v -= mean;
      gmax = std::max(gmax, std::abs(v));
    }
    if (!std::isfinite(gmax)) throw NumericError("objective gradient is not finite");
    // What survives the projection of a constant gradient is rounding noise;
    // the scale-free step constant would otherwise amplify it.
    if (gmax <= 1e-12 * std::max(1.0, graw)) {
      std::fill(g.begin(), g.end(), 0.0);
      gmax = 0.0;
    }

    double d;
    if (const auto* cs = std::get_if<ConstantStep>(&config.step)) {
      d = cs->d;
    } else {
      if (!rm_c) rm_c = 0.1 / (gmax + 1e-12);
      d = *rm_c / static_cast<double>(t + 1);
    }

    std::vector<double> next(m);
    clipped = false;
    double sum = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      next[i] = p[i] + d * g[i];
      if (next[i] < 0.0) {
        next[i] = 0.0;
        clipped = true;
      }
      sum += next[i];
    }
    double change = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      next[i] /= sum;
      change = std::max(change, std::abs(next[i] - p[i]));
    }
    // Snap the sum to one so drift never accumulates across iterations.
    double total = 0.0;
    std::size_t largest = 0;
    for (std::size_t i = 0; i < m; ++i) {
      total += next[i];
      if (next[i] > next[largest]) largest = i;
    }
    next[largest] += 1.0 - total;
    p = MixingRatio(std::move(next));
    if (change <= config.converge_tol) res.converged = true;
  }
  return res;
}

SelectionResult select_fixed_budget(const ScalePair& pair, long budget,
                                    std::span<const Dataset> pilots, const Dataset& val,
                                    const OptimizerConfig& config) {
  std::size_t capacity = 0;
  for (const auto& d : pilots) capacity += d.size();
  if (static_cast<std::size_t>(pair.n1) > capacity)
    throw FeasibilityError("pilot data cannot supply a composition of size n1");
  ProjectedObjective obj(pair, {pilots.begin(), pilots.end()}, val, config.seed);
  return ascend(obj, budget, config);
}

std::pair<long, SelectionResult> search_min_budget(Objective& objective,
                                                   const BudgetSearchConfig& config) {
  if (config.n_grid.empty()) throw ConfigError("budget grid is empty");
  for (std::size_t i = 1; i < config.n_grid.size(); ++i)
    if (config.n_grid[i] <= config.n_grid[i - 1])
      throw ConfigError("budget grid must be strictly increasing");
  OptimizerConfig inner = config.inner;
  long best_n = config.n_grid.front();
  double best_perf = -std::numeric_limits<double>::infinity();
  for (long n : config.n_grid) {
    SelectionResult r = ascend(objective, n, inner);
    if (r.predicted_performance >= config.target) return {n, std::move(r)};
    if (r.predicted_performance > best_perf) {
      best_perf = r.predicted_performance;
      best_n = n;
    }
    inner.init = r.ratio;
  }
  throw UnreachableTargetError("no budget on the grid reaches the target performance", best_n,
                               best_perf);
}

std::pair<long, SelectionResult> search_min_budget(const ScalePair& pair,
                                                   std::span<const Dataset> pilots,
                                                   const Dataset& val,
                                                   const BudgetSearchConfig& config) {
  ProjectedObjective obj(pair, {pilots.begin(), pilots.end()}, val, config.inner.seed);
  return search_min_budget(obj, config);
}

void write_trajectory_csv(const std::string& path, const SelectionResult& result) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path);
  out.precision(17);
  const std::size_t m = result.ratio.size();
  out << "iter";
  for (std::size_t i = 0; i < m; ++i) out << ",p_" << i;
  out << ",objective\n";
  for (const auto& rec : result.trajectory) {
    out << rec.iter;
    for (std::size_t i = 0; i < m; ++i) out << ',' << rec.ratio[i];
    out << ',' << rec.objective << '\n';
  }
}

nlohmann::json to_json(const SelectionResult& result) {
  std::size_t clips = 0;
  for (const auto& rec : result.trajectory) clips += rec.clipped;
  return nlohmann::json{{"ratio", result.ratio.vector()},
                        {"predicted_performance", result.predicted_performance},
                        {"converged", result.converged},
                        {"iterations", result.iterations},
                        {"clipped_steps", clips},
                        {"stopped_early", result.stopped_early}};
}

}  // namespace projektor
