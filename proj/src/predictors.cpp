#include "projektor/predictors.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include "projektor/errors.hpp"

namespace projektor {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double log_budget(long budget) {
  if (budget < 1) throw DimensionError("budget must be at least 1 for the log N term");
  return std::log(static_cast<double>(budget));
}

void require_dim(const PredictorModel& model, const MixingRatio& ratio) {
  if (ratio.size() != model.m)
    throw DimensionError("model expects " + std::to_string(model.m) +
                         " sources, ratio has " + std::to_string(ratio.size()));
  if (model.params.size() != parameter_count(model.kind, model.m))
    throw DimensionError("model parameter vector has the wrong length");
}

std::size_t common_dim(std::span<const TrainingTuple> tuples) {
  if (tuples.empty()) throw SizeError("no training tuples");
  const std::size_t m = tuples.front().ratio.size();
  for (const auto& t : tuples)
    if (t.ratio.size() != m) throw DimensionError("training tuples mix source counts");
  return m;
}

double rms(const Eigen::VectorXd& r) {
  return std::sqrt(r.squaredNorm() / static_cast<double>(r.size()));
}

bool is_linear_kind(PredictorKind kind) {
  return kind != PredictorKind::Rational;
}

double rational_target(double accuracy) {
  return std::log1p(-std::min(accuracy, kRationalAccuracyCap));
}

}  // namespace

std::string_view to_string(PredictorKind kind) {
  switch (kind) {
    case PredictorKind::CS: return "cs";
    case PredictorKind::PQ: return "pq";
    case PredictorKind::Linear: return "linear";
    case PredictorKind::PseudoQuadratic: return "pseudo_quadratic";
    case PredictorKind::Quadratic: return "quadratic";
    case PredictorKind::Rational: return "rational";
    case PredictorKind::LOO: return "loo";
    case PredictorKind::Shapley: return "shapley";
  }
  return "?";
}

PredictorKind predictor_kind_from_string(std::string_view name) {
  for (auto k : {PredictorKind::CS, PredictorKind::PQ, PredictorKind::Linear,
                 PredictorKind::PseudoQuadratic, PredictorKind::Quadratic,
                 PredictorKind::Rational, PredictorKind::LOO, PredictorKind::Shapley})
    if (to_string(k) == name) return k;
  throw ConfigError("unknown predictor kind '" + std::string(name) + "'");
}

std::size_t parameter_count(PredictorKind kind, std::size_t m) {
  switch (kind) {
    case PredictorKind::CS: return 2;
    case PredictorKind::PQ: return 4 * m + 2;
    case PredictorKind::Linear:
    case PredictorKind::LOO:
    case PredictorKind::Shapley: return m + 2;
    case PredictorKind::PseudoQuadratic: return 2 * m + 2;
    case PredictorKind::Quadratic: return 2 * m + m * (m + 1) / 2 + 2;
    case PredictorKind::Rational: return m * m + 1;
  }
  return 0;
}

Eigen::VectorXd design_row(PredictorKind kind, const MixingRatio& ratio, double ot,
                           long budget) {
  const auto m = static_cast<Eigen::Index>(ratio.size());
  const double md = static_cast<double>(m);
  Eigen::VectorXd row(static_cast<Eigen::Index>(parameter_count(kind, ratio.size())));
  switch (kind) {
    case PredictorKind::CS:
      row << ot, 1.0;
      break;
    case PredictorKind::PQ:
      for (Eigen::Index i = 0; i < m; ++i) {
        const double p = ratio[static_cast<std::size_t>(i)];
        row[i] = p * p * ot;
        row[m + i] = p * ot;
        row[2 * m + 1 + i] = p * p;
        row[3 * m + 1 + i] = p;
      }
      row[2 * m] = md * ot;  // b0 appears once per source
      row[4 * m + 1] = md;   // likewise c0
      break;
    case PredictorKind::Linear:
    case PredictorKind::LOO:
    case PredictorKind::Shapley:
      for (Eigen::Index i = 0; i < m; ++i) row[i] = ratio[static_cast<std::size_t>(i)];
      row[m] = log_budget(budget);
      row[m + 1] = 1.0;
      break;
    case PredictorKind::PseudoQuadratic:
    case PredictorKind::Quadratic: {
      for (Eigen::Index i = 0; i < m; ++i) {
        const double p = ratio[static_cast<std::size_t>(i)];
        row[i] = p * p;
        row[m + i] = p;
      }
      row[2 * m] = md;
      Eigen::Index at = 2 * m + 1;
      if (kind == PredictorKind::Quadratic)
        for (Eigen::Index i = 0; i < m; ++i)
          for (Eigen::Index j = 0; j <= i; ++j)
            row[at++] = ratio[static_cast<std::size_t>(i)] * ratio[static_cast<std::size_t>(j)];
      row[at] = log_budget(budget);
      break;
    }
    case PredictorKind::Rational:
      throw ConfigError("rational model is not linear in its parameters");
  }
  return row;
}

double predict(const PredictorModel& model, const MixingRatio& ratio, double ot_distance,
               long budget) {
  require_dim(model, ratio);
  if (model.kind == PredictorKind::Rational) {
    const std::size_t m = model.m;
    double v = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += model.params[i * m + j] * ratio[j];
      v += 1.0 / s;
    }
    return v + model.params[m * m] * log_budget(budget);
  }
  const Eigen::VectorXd row = design_row(model.kind, ratio, ot_distance, budget);
  const Eigen::Map<const Eigen::VectorXd> theta(model.params.data(), row.size());
  return row.dot(theta);
}

double predict_performance(const PredictorModel& model, const MixingRatio& ratio,
                           double ot_distance, long budget) {
  const double raw = predict(model, ratio, ot_distance, budget);
  if (model.kind == PredictorKind::Rational) return -std::expm1(raw);
  return raw;
}

std::vector<double> least_squares(const Eigen::MatrixXd& design, const Eigen::VectorXd& target,
                                  bool* rank_deficient) {
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod;
  cod.setThreshold(1e-10);
  cod.compute(design);
  const Eigen::VectorXd theta = cod.solve(target);
  if (rank_deficient) *rank_deficient = cod.rank() < design.cols();
  return {theta.data(), theta.data() + theta.size()};
}

// ---------------------------------------------------------------------------
// Fitting

PredictorModel fit_cs(std::span<const TrainingTuple> tuples) {
  const std::size_t m = common_dim(tuples);
  if (tuples.size() < 2) throw SizeError("CS needs at least two tuples");
  const double n = static_cast<double>(tuples.size());
  double mx = 0.0, my = 0.0;
  for (const auto& t : tuples) {
    mx += t.ot_distance;
    my += t.performance;
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (const auto& t : tuples) {
    sxx += (t.ot_distance - mx) * (t.ot_distance - mx);
    sxy += (t.ot_distance - mx) * (t.performance - my);
  }
  if (!(sxx > 0.0))
    throw RankDeficiencyError("CS fit needs at least two distinct OT distances");
  PredictorModel model{PredictorKind::CS, m, {sxy / sxx, 0.0}, 0.0, false};
  model.params[1] = my - model.params[0] * mx;
  Eigen::VectorXd r(static_cast<Eigen::Index>(tuples.size()));
  for (std::size_t k = 0; k < tuples.size(); ++k)
    r[static_cast<Eigen::Index>(k)] =
        model.params[0] * tuples[k].ot_distance + model.params[1] - tuples[k].performance;
  model.fit_residual = rms(r);
  return model;
}

namespace {

PredictorModel fit_linear_kind(PredictorKind kind, std::span<const TrainingTuple> tuples) {
  const std::size_t m = common_dim(tuples);
  const std::size_t k = parameter_count(kind, m);
  if (tuples.size() < k)
    throw SizeError(std::string(to_string(kind)) + " needs at least " + std::to_string(k) +
                    " tuples, got " + std::to_string(tuples.size()));
  Eigen::MatrixXd x(static_cast<Eigen::Index>(tuples.size()), static_cast<Eigen::Index>(k));
  Eigen::VectorXd y(static_cast<Eigen::Index>(tuples.size()));
  for (std::size_t r = 0; r < tuples.size(); ++r) {
    x.row(static_cast<Eigen::Index>(r)) =
        design_row(kind, tuples[r].ratio, tuples[r].ot_distance, tuples[r].budget);
    y[static_cast<Eigen::Index>(r)] = tuples[r].performance;
  }
  PredictorModel model{kind, m, {}, 0.0, false};
  model.params = least_squares(x, y, &model.rank_deficient);
  const Eigen::Map<const Eigen::VectorXd> theta(model.params.data(),
                                                static_cast<Eigen::Index>(k));
  model.fit_residual = rms(x * theta - y);
  return model;
}

struct RationalProblem {
  std::size_t m;
  std::vector<const TrainingTuple*> tuples;
  Eigen::VectorXd z;        // log(1 - accuracy)
  Eigen::VectorXd log_n;

  // Residuals (prediction - target); false when a denominator vanishes.
  bool residuals(const Eigen::VectorXd& theta, Eigen::VectorXd& r,
                 Eigen::MatrixXd* jac) const {
    const auto rows = static_cast<Eigen::Index>(tuples.size());
    r.resize(rows);
    if (jac) jac->setZero(rows, theta.size());
    for (Eigen::Index k = 0; k < rows; ++k) {
      const auto& p = tuples[static_cast<std::size_t>(k)]->ratio;
      double v = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < m; ++j) s += theta[static_cast<Eigen::Index>(i * m + j)] * p[j];
        if (!(std::abs(s) > 1e-12)) return false;
        v += 1.0 / s;
        if (jac)
          for (std::size_t j = 0; j < m; ++j)
            (*jac)(k, static_cast<Eigen::Index>(i * m + j)) = -p[j] / (s * s);
      }
      const Eigen::Index b = static_cast<Eigen::Index>(m * m);
      r[k] = v + theta[b] * log_n[k] - z[k];
      if (jac) (*jac)(k, b) = log_n[k];
    }
    return r.allFinite();
  }
};

// Levenberg-Marquardt from one start; returns the final sum of squares
// (NaN on failure) and leaves the solution in theta.
double levenberg_marquardt(const RationalProblem& prob, Eigen::VectorXd& theta, int max_iters) {
  Eigen::VectorXd r, r_try;
  Eigen::MatrixXd jac;
  if (!prob.residuals(theta, r, &jac)) return kNaN;
  double ssr = r.squaredNorm();
  double mu = 1e-3;
  for (int it = 0; it < max_iters; ++it) {
    const Eigen::MatrixXd jtj = jac.transpose() * jac;
    const Eigen::VectorXd grad = jac.transpose() * r;
    if (grad.lpNorm<Eigen::Infinity>() < 1e-14) break;
    bool accepted = false;
    for (int attempt = 0; attempt < 30 && !accepted; ++attempt) {
      Eigen::MatrixXd lhs = jtj;
      lhs.diagonal().array() += mu * (jtj.diagonal().array() + 1e-12);
      const Eigen::VectorXd step = lhs.ldlt().solve(-grad);
      const Eigen::VectorXd candidate = theta + step;
      if (step.allFinite() && prob.residuals(candidate, r_try, nullptr) &&
          r_try.squaredNorm() < ssr) {
        const double gain = ssr - r_try.squaredNorm();
        theta = candidate;
        prob.residuals(theta, r, &jac);
        ssr = r.squaredNorm();
        mu = std::max(mu / 3.0, 1e-12);
        accepted = true;
        if (gain <= 1e-15 * std::max(ssr, 1e-300)) return ssr;
      } else {
        mu *= 4.0;
      }
    }
    if (!accepted) break;
  }
  return ssr;
}

PredictorModel fit_rational(std::span<const TrainingTuple> tuples,
                            const RationalFitOptions& options) {
  const std::size_t m = common_dim(tuples);
  const std::size_t k = parameter_count(PredictorKind::Rational, m);
  if (tuples.size() < k)
    throw SizeError("rational needs at least " + std::to_string(k) + " tuples");
  RationalProblem prob{m, {}, Eigen::VectorXd(static_cast<Eigen::Index>(tuples.size())),
                       Eigen::VectorXd(static_cast<Eigen::Index>(tuples.size()))};
  for (std::size_t r = 0; r < tuples.size(); ++r) {
    prob.tuples.push_back(&tuples[r]);
    prob.z[static_cast<Eigen::Index>(r)] = rational_target(tuples[r].performance);
    prob.log_n[static_cast<Eigen::Index>(r)] = log_budget(tuples[r].budget);
  }
  double zbar = prob.z.mean();
  if (std::abs(zbar) < 1e-6) zbar = -1e-6;
  // Equal coefficients c make every term 1/c; m/c = mean target.
  const double base = static_cast<double>(m) / zbar;

  std::vector<double> trace;
  double best_ssr = std::numeric_limits<double>::infinity();
  Eigen::VectorXd best;
  for (int s = 0; s < options.starts; ++s) {
    Eigen::VectorXd theta(static_cast<Eigen::Index>(k));
    std::mt19937_64 rng(mix_seed(options.seed, static_cast<std::uint64_t>(s)));
    std::uniform_real_distribution<double> jitter(-0.5, 0.5);
    for (std::size_t c = 0; c < m * m; ++c)
      theta[static_cast<Eigen::Index>(c)] = base * (1.0 + (s == 0 ? 0.0 : jitter(rng)));
    theta[static_cast<Eigen::Index>(m * m)] = 0.0;
    const double ssr = levenberg_marquardt(prob, theta, options.max_iters);
    trace.push_back(ssr);
    // Strict comparison keeps the lowest start index on ties.
    if (std::isfinite(ssr) && ssr < best_ssr) {
      best_ssr = ssr;
      best = theta;
    }
  }
  if (!std::isfinite(best_ssr))
    throw FitFailureError("rational fit diverged on every start", std::move(trace));
  PredictorModel model{PredictorKind::Rational, m, {best.data(), best.data() + best.size()},
                       std::sqrt(best_ssr / static_cast<double>(tuples.size())), false};
  return model;
}

}  // namespace

PredictorModel fit_pq(std::span<const TrainingTuple> tuples) {
  return fit_linear_kind(PredictorKind::PQ, tuples);
}

PredictorModel fit_baseline(PredictorKind kind, std::span<const TrainingTuple> tuples,
                            const RationalFitOptions& rational) {
  switch (kind) {
    case PredictorKind::CS: return fit_cs(tuples);
    case PredictorKind::Rational: return fit_rational(tuples, rational);
    case PredictorKind::LOO:
    case PredictorKind::Shapley:
      throw ConfigError("LOO and Shapley models are built from data values, not fitted");
    default: break;
  }
  if (!is_linear_kind(kind)) throw ConfigError("unsupported predictor kind");
  return fit_linear_kind(kind, tuples);
}

// ---------------------------------------------------------------------------
// Data values

std::vector<double> loo_values(const SubsetUtility& utility, std::size_t m) {
  if (m == 0 || m > 31) throw SizeError("LOO supports 1..31 sources");
  const std::uint32_t all = (m == 32) ? ~0u : ((1u << m) - 1u);
  const double full = utility(all);
  std::vector<double> v(m);
  for (std::size_t i = 0; i < m; ++i) v[i] = full - utility(all & ~(1u << i));
  return v;
}

std::vector<double> shapley_values(const SubsetUtility& utility, std::size_t m) {
  if (m == 0 || m > kShapleyMaxSources)
    throw SizeError("exact Shapley enumeration supports 1.." +
                    std::to_string(kShapleyMaxSources) + " sources");
  const std::uint32_t count = 1u << m;
  std::vector<double> value(count);
  for (std::uint32_t s = 0; s < count; ++s) value[s] = utility(s);

  // phi_i = (1/m) sum_k mean of the marginal contributions over coalitions of
  // size k. Summing within a layer before dividing by the (exact, integral)
  // binomial keeps additive games exact.
  std::vector<double> binom(m, 1.0);  // C(m-1, k)
  for (std::size_t k = 1; k < m; ++k)
    binom[k] = binom[k - 1] * static_cast<double>(m - k) / static_cast<double>(k);
  std::vector<double> phi(m, 0.0);
  std::vector<double> layer(m);
  for (std::size_t i = 0; i < m; ++i) {
    const std::uint32_t bit = 1u << i;
    std::fill(layer.begin(), layer.end(), 0.0);
    for (std::uint32_t s = 0; s < count; ++s) {
      if (s & bit) continue;
      layer[static_cast<std::size_t>(std::popcount(s))] += value[s | bit] - value[s];
    }
    double acc = 0.0;
    for (std::size_t k = 0; k < m; ++k) acc += layer[k] / binom[k];
    phi[i] = acc / static_cast<double>(m);
  }
  return phi;
}

ValueRatio selection_ratio_from_values(std::span<const double> values) {
  if (values.empty()) throw DimensionError("no data values");
  std::vector<double> w(values.begin(), values.end());
  double sum = 0.0;
  for (double& v : w) {
    v = std::max(v, 0.0);
    sum += v;
  }
  if (!(sum > 0.0)) return {MixingRatio::uniform(values.size()), true};
  return {MixingRatio::normalized(std::move(w)), false};
}

PredictorModel value_model(PredictorKind kind, std::span<const double> values,
                           std::span<const TrainingTuple> tuples) {
  if (kind != PredictorKind::LOO && kind != PredictorKind::Shapley)
    throw ConfigError("value models are LOO or Shapley");
  const std::size_t m = values.size();
  PredictorModel model{kind, m, std::vector<double>(values.begin(), values.end()), 0.0, false};
  model.params.push_back(0.0);
  model.params.push_back(0.0);
  if (tuples.empty()) return model;
  common_dim(tuples);
  Eigen::MatrixXd x(static_cast<Eigen::Index>(tuples.size()), 2);
  Eigen::VectorXd y(static_cast<Eigen::Index>(tuples.size()));
  for (std::size_t r = 0; r < tuples.size(); ++r) {
    if (tuples[r].ratio.size() != m) throw DimensionError("tuple ratio does not match values");
    double ap = 0.0;
    for (std::size_t i = 0; i < m; ++i) ap += values[i] * tuples[r].ratio[i];
    x(static_cast<Eigen::Index>(r), 0) = log_budget(tuples[r].budget);
    x(static_cast<Eigen::Index>(r), 1) = 1.0;
    y[static_cast<Eigen::Index>(r)] = tuples[r].performance - ap;
  }
  const auto bc = least_squares(x, y, &model.rank_deficient);
  model.params[m] = bc[0];
  model.params[m + 1] = bc[1];
  const Eigen::Vector2d theta(bc[0], bc[1]);
  model.fit_residual = rms(x * theta - y);
  return model;
}

// ---------------------------------------------------------------------------
// Serialization

nlohmann::json to_json(const PredictorModel& model) {
  return nlohmann::json{{"kind", std::string(to_string(model.kind))},
                        {"m", model.m},
                        {"params", model.params},
                        {"fit_residual", model.fit_residual},
                        {"rank_deficient", model.rank_deficient}};
}

PredictorModel model_from_json(const nlohmann::json& j) {
  try {
    PredictorModel model;
    model.kind = predictor_kind_from_string(j.at("kind").get<std::string>());
    model.m = j.at("m").get<std::size_t>();
    model.params = j.at("params").get<std::vector<double>>();
    model.fit_residual = j.at("fit_residual").get<double>();
    model.rank_deficient = j.value("rank_deficient", false);
    if (model.params.size() != parameter_count(model.kind, model.m))
      throw ParseError("model json: parameter count does not match kind and m");
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("model json: ") + e.what());
  }
}

void save_model(const std::string& path, const PredictorModel& model) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write model file " + path);
  out << to_json(model).dump(2) << '\n';
}

PredictorModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open model file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("model file " + path + ": " + e.what());
  }
  return model_from_json(j);
}

}  // namespace projektor
