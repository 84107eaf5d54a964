#include "projektor/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "projektor/errors.hpp"

namespace projektor {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Config

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> allowed,
                    const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : j.items())
    if (!ok.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  return j.at(key).get<T>();
}

GaussianSource parse_gaussian(const json& j, const std::string& where) {
  reject_unknown(j, {"size", "classes", "class_weights", "shift", "std", "label_noise"}, where);
  GaussianSource g;
  g.size = j.at("size").get<std::size_t>();
  g.classes = j.at("classes").get<std::vector<int>>();
  g.class_weights = get_or(j, "class_weights", std::vector<double>{});
  g.shift = get_or(j, "shift", std::vector<double>{});
  g.std = get_or(j, "std", 1.0);
  g.label_noise = get_or(j, "label_noise", 0.0);
  if (g.classes.empty()) throw ConfigError(where + ": no classes");
  if (!g.class_weights.empty() && g.class_weights.size() != g.classes.size())
    throw ConfigError(where + ": class_weights length differs from classes");
  if (!(g.std >= 0.0)) throw ConfigError(where + ": std must be nonnegative");
  if (!(g.label_noise >= 0.0 && g.label_noise <= 1.0))
    throw ConfigError(where + ": label_noise must lie in [0,1]");
  return g;
}

SourceConfig parse_source(const json& j, const std::string& where) {
  reject_unknown(j, {"id", "gaussian", "csv", "pilot_size"}, where);
  SourceConfig s;
  s.id = get_or<std::string>(j, "id", "");
  if (j.contains("gaussian")) s.gaussian = parse_gaussian(j.at("gaussian"), where + ".gaussian");
  if (j.contains("csv")) s.csv = j.at("csv").get<std::string>();
  if (s.gaussian.has_value() == s.csv.has_value())
    throw ConfigError(where + ": exactly one of 'gaussian' or 'csv' is required");
  s.pilot_size = get_or<std::size_t>(j, "pilot_size", 0);
  return s;
}

LearnerSpec parse_learner(const json& j) {
  reject_unknown(j, {"kind", "seed", "lr", "epochs", "l2", "alpha", "c", "quad_weight"},
                 "learner");
  LearnerSpec spec;
  spec.seed = get_or<std::uint64_t>(j, "seed", 0);
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "nearest_centroid") {
    spec.kind = NearestCentroid{};
  } else if (kind == "logistic") {
    spec.kind = LogisticRegression{get_or(j, "lr", 0.1), get_or(j, "epochs", 100),
                                   get_or(j, "l2", 0.0)};
  } else if (kind == "synthetic_log_linear") {
    spec.kind = SyntheticLogLinear{j.at("alpha").get<std::vector<double>>(),
                                   j.at("c").get<std::vector<double>>(),
                                   get_or(j, "quad_weight", 0.0)};
  } else {
    throw ConfigError("unknown learner kind '" + kind + "'");
  }
  spec.validate();
  return spec;
}

OptimizerConfig parse_optimizer(const json& j) {
  reject_unknown(j, {"step", "c", "d", "max_iters", "tol", "seed", "init"}, "selection");
  OptimizerConfig cfg;
  const auto step = get_or<std::string>(j, "step", "robbins_monro");
  if (step == "robbins_monro") {
    RobbinsMonro rm;
    if (j.contains("c")) rm.c = j.at("c").get<double>();
    cfg.step = rm;
  } else if (step == "constant") {
    cfg.step = ConstantStep{get_or(j, "d", 0.1)};
  } else {
    throw ConfigError("unknown step schedule '" + step + "'");
  }
  cfg.max_iters = get_or(j, "max_iters", cfg.max_iters);
  cfg.converge_tol = get_or(j, "tol", cfg.converge_tol);
  cfg.seed = get_or<std::uint64_t>(j, "seed", 0);
  if (j.contains("init")) cfg.init = MixingRatio(j.at("init").get<std::vector<double>>());
  return cfg;
}

std::optional<long> parse_scale(const json& j, const char* key) {
  if (!j.contains(key)) return std::nullopt;
  const auto& v = j.at(key);
  if (v.is_string()) {
    if (v.get<std::string>() != "auto") throw ConfigError(std::string(key) + " must be an integer or \"auto\"");
    return std::nullopt;
  }
  return v.get<long>();
}

}  // namespace

ExperimentConfig parse_config(const json& j, const std::string& base_dir) {
  try {
    reject_unknown(j,
                   {"seed", "dim", "num_classes", "mean_scale", "class_means", "sources", "val",
                    "cost", "ot", "learner", "n0", "n1", "grid_resolution", "replicates",
                    "predictors", "seeds", "extrapolation", "projection", "selection",
                    "budget_search", "efficiency"},
                   "config");
    ExperimentConfig c;
    c.base_dir = base_dir;
    c.seed = get_or<std::uint64_t>(j, "seed", 0);
    c.dim = get_or<std::size_t>(j, "dim", 2);
    c.num_classes = get_or(j, "num_classes", 2);
    c.mean_scale = get_or(j, "mean_scale", 3.0);
    if (j.contains("class_means")) {
      const auto rows = j.at("class_means").get<std::vector<std::vector<double>>>();
      FeatureMatrix means(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(c.dim));
      for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != c.dim) throw ConfigError("class_means row has the wrong length");
        for (std::size_t k = 0; k < c.dim; ++k)
          means(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = rows[r][k];
      }
      c.num_classes = static_cast<int>(rows.size());
      c.class_means = std::move(means);
    }
    const auto& sources = j.at("sources");
    if (!sources.is_array() || sources.empty()) throw ConfigError("sources must be a nonempty list");
    for (std::size_t i = 0; i < sources.size(); ++i) {
      c.sources.push_back(parse_source(sources[i], "sources[" + std::to_string(i) + "]"));
      if (c.sources.back().id.empty()) c.sources.back().id = "source" + std::to_string(i);
    }
    c.val = parse_source(j.at("val"), "val");
    if (c.val.id.empty()) c.val.id = "val";

    if (j.contains("cost")) {
      const auto& cost = j.at("cost");
      reject_unknown(cost, {"metric", "label_weight"}, "cost");
      const auto metric = get_or<std::string>(cost, "metric", "sqeuclidean");
      if (metric == "sqeuclidean") c.metric = FeatureMetric::SquaredEuclidean;
      else if (metric == "euclidean") c.metric = FeatureMetric::Euclidean;
      else throw ConfigError("unknown metric '" + metric + "'");
      if (cost.contains("label_weight") && !cost.at("label_weight").is_string())
        c.label_weight = cost.at("label_weight").get<double>();
    }
    if (j.contains("ot")) {
      const auto& ot = j.at("ot");
      reject_unknown(ot, {"solver", "tol", "max_iters", "epsilon_final_ratio", "anneal_factor"}, "ot");
      const auto solver = get_or<std::string>(ot, "solver", "auto");
      if (solver == "auto") c.solver = OtSolver::Auto;
      else if (solver == "entropic") c.solver = OtSolver::Entropic;
      else if (solver == "exact") c.solver = OtSolver::Exact;
      else throw ConfigError("unknown solver '" + solver + "'");
      c.sinkhorn.tol = get_or(ot, "tol", c.sinkhorn.tol);
      c.sinkhorn.max_iters = get_or(ot, "max_iters", c.sinkhorn.max_iters);
      c.sinkhorn.epsilon_final_ratio = get_or(ot, "epsilon_final_ratio", c.sinkhorn.epsilon_final_ratio);
      c.sinkhorn.anneal_factor = get_or(ot, "anneal_factor", c.sinkhorn.anneal_factor);
    }
    c.learner = parse_learner(j.at("learner"));
    c.n0 = parse_scale(j, "n0");
    c.n1 = parse_scale(j, "n1");
    // Default lattice: 0.1 up to three sources, 0.2 beyond (grids grow as C(r+m-1, m-1)).
    c.grid_resolution = get_or(j, "grid_resolution", c.sources.size() <= 3 ? 0.1 : 0.2);
    c.replicates = get_or(j, "replicates", c.replicates);
    if (c.replicates < 1) throw ConfigError("replicates must be at least 1");
    if (j.contains("predictors")) {
      c.predictors.clear();
      for (const auto& k : j.at("predictors")) c.predictors.push_back(predictor_kind_from_string(k.get<std::string>()));
    }
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (c.seeds.empty()) throw ConfigError("seeds must be nonempty");
    if (j.contains("extrapolation")) {
      const auto& e = j.at("extrapolation");
      reject_unknown(e, {"source", "cap"}, "extrapolation");
      c.extrapolation_source = get_or<std::size_t>(e, "source", 0);
      c.extrapolation_cap = get_or(e, "cap", c.extrapolation_cap);
    }
    if (j.contains("projection")) {
      const auto& p = j.at("projection");
      reject_unknown(p, {"targets"}, "projection");
      c.projection_targets = get_or(p, "targets", std::vector<long>{});
    }
    if (j.contains("selection")) {
      json sel = j.at("selection");
      c.selection.budget = get_or(sel, "budget", 0L);
      sel.erase("budget");
      c.selection.optimizer = parse_optimizer(sel);
    }
    if (j.contains("budget_search")) {
      const auto& b = j.at("budget_search");
      reject_unknown(b, {"target", "grid"}, "budget_search");
      c.budget_search.target = b.at("target").get<double>();
      c.budget_search.grid = b.at("grid").get<std::vector<long>>();
    }
    if (j.contains("efficiency")) {
      const auto& e = j.at("efficiency");
      reject_unknown(e, {"counts"}, "efficiency");
      c.efficiency_counts = e.at("counts").get<std::vector<std::size_t>>();
    }

    const double steps = 1.0 / c.grid_resolution;
    if (!(c.grid_resolution > 0.0 && c.grid_resolution <= 1.0) ||
        std::abs(steps - std::round(steps)) > 1e-9)
      throw ConfigError("grid_resolution must divide 1 into an integer number of steps");
    if (c.extrapolation_source >= c.sources.size())
      throw ConfigError("extrapolation source index out of range");
    if (!(c.extrapolation_cap > 0.0 && c.extrapolation_cap < 1.0))
      throw ConfigError("extrapolation cap must lie in (0,1)");
    if (const auto* s = std::get_if<SyntheticLogLinear>(&c.learner.kind))
      if (s->alpha_coeffs.size() != c.sources.size())
        throw ConfigError("synthetic learner coefficients must have one entry per source");
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
  return parse_config(j, std::filesystem::path(path).parent_path().string());
}

// ---------------------------------------------------------------------------
// Data

FeatureMatrix class_means(const ExperimentConfig& config) {
  if (config.class_means) return *config.class_means;
  std::mt19937_64 rng(mix_seed(config.seed, 0xc1a55));
  std::normal_distribution<double> normal(0.0, config.mean_scale);
  FeatureMatrix means(config.num_classes, static_cast<Eigen::Index>(config.dim));
  for (Eigen::Index i = 0; i < means.size(); ++i) means.data()[i] = normal(rng);
  return means;
}

Dataset generate_gaussian(const GaussianSource& spec, const FeatureMatrix& means,
                          std::uint64_t seed, std::string id) {
  const auto d = means.cols();
  for (int c : spec.classes)
    if (c < 0 || c >= means.rows()) throw ConfigError("class index outside the means table");
  if (!spec.shift.empty() && static_cast<Eigen::Index>(spec.shift.size()) != d)
    throw ConfigError("shift has the wrong dimension");
  std::mt19937_64 rng(seed);
  std::vector<double> w = spec.class_weights;
  if (w.empty()) w.assign(spec.classes.size(), 1.0);
  std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
  std::normal_distribution<double> noise(0.0, 1.0);

  Dataset out;
  out.id = std::move(id);
  out.features.resize(static_cast<Eigen::Index>(spec.size), d);
  std::vector<int> labels(spec.size);
  for (std::size_t r = 0; r < spec.size; ++r) {
    const int c = spec.classes[pick(rng)];
    labels[r] = c;
    for (Eigen::Index k = 0; k < d; ++k) {
      const double shift = spec.shift.empty() ? 0.0 : spec.shift[static_cast<std::size_t>(k)];
      out.features(static_cast<Eigen::Index>(r), k) = means(c, k) + shift + spec.std * noise(rng);
    }
  }
  out.labels = std::move(labels);
  if (spec.label_noise > 0.0)
    out = corrupt_labels(out, spec.label_noise, static_cast<int>(means.rows()), mix_seed(seed, 0x401));
  return out;
}

namespace {

Dataset load_source(const ExperimentConfig& config, const SourceConfig& s, const FeatureMatrix& means,
                    std::uint64_t seed) {
  Dataset d;
  if (s.gaussian) {
    d = generate_gaussian(*s.gaussian, means, mix_seed(seed, hash_string(s.id)), s.id);
  } else {
    std::filesystem::path p(*s.csv);
    if (p.is_relative() && !config.base_dir.empty()) p = std::filesystem::path(config.base_dir) / p;
    d = read_dataset_csv(p.string());
    d.id = s.id;
  }
  return d;
}

}  // namespace

ExperimentData materialize(const ExperimentConfig& config, std::uint64_t seed) {
  ExperimentConfig seeded = config;
  seeded.seed = mix_seed(config.seed, seed);
  const FeatureMatrix means = class_means(seeded);
  ExperimentData data;
  for (const auto& s : config.sources) {
    Dataset full = load_source(config, s, means, seeded.seed);
    const std::size_t pilot = s.pilot_size == 0 ? full.size() : s.pilot_size;
    Dataset p = sample_pilot(DataSource{full, pilot}, PermutationSampling{},
                             mix_seed(seeded.seed, hash_string(s.id) ^ 0x9e3779b97f4a7c15ULL));
    p.id = s.id;
    data.full.push_back(std::move(full));
    data.pilots.push_back(std::move(p));
  }
  data.val = load_source(config, config.val, means, seeded.seed);
  if (config.val.pilot_size != 0 && config.val.pilot_size < data.val.size())
    data.val = sample_pilot(DataSource{data.val, config.val.pilot_size}, PermutationSampling{},
                            mix_seed(seeded.seed, 0x7a1));
  data.val.id = config.val.id;
  const std::size_t dim = data.val.dim();
  for (const auto& p : data.pilots)
    if (p.dim() != dim) throw DimensionError("source '" + p.id + "' has a different feature dimension");
  return data;
}

Scales resolve_scales(const ExperimentConfig& config, const ExperimentData& data) {
  std::vector<std::size_t> sizes;
  for (const auto& p : data.pilots) sizes.push_back(p.size());
  const std::size_t smallest = *std::min_element(sizes.begin(), sizes.end());
  long n1 = config.n1.value_or(static_cast<long>(smallest));
  long n0;
  if (config.n0) {
    n0 = *config.n0;
  } else {
    const std::size_t one[] = {static_cast<std::size_t>(n1)};
    n0 = default_scales(one).n0;
  }
  if (!(n0 >= 1 && n0 < n1)) throw ConfigError("scales must satisfy 1 <= n0 < n1");
  if (static_cast<std::size_t>(n1) > smallest)
    throw ConfigError("n1 exceeds the smallest pilot size");
  return {n0, n1};
}

CostSpec resolve_cost(const ExperimentConfig& config, const ExperimentData& data) {
  CostSpec spec;
  spec.feature_metric = config.metric;
  if (config.label_weight) {
    spec.label_weight = *config.label_weight;
  } else {
    const Dataset all = concatenate(data.pilots);
    spec.label_weight = default_label_weight(all, data.val, config.metric);
  }
  return spec;
}

// ---------------------------------------------------------------------------
// Grid and fit data

std::vector<MixingRatio> grid_ratios(std::size_t m, double resolution) {
  if (m == 0) throw DimensionError("grid needs at least one source");
  const double steps = 1.0 / resolution;
  const long r = std::lround(steps);
  if (!(resolution > 0.0) || r < 1 || std::abs(steps - static_cast<double>(r)) > 1e-9)
    throw ConfigError("resolution must be 1/r for a positive integer r");
  std::vector<MixingRatio> out;
  std::vector<long> k(m, 0);
  // Enumerate compositions of r into m parts in lexicographic order.
  std::function<void(std::size_t, long)> rec = [&](std::size_t i, long left) {
    if (i + 1 == m) {
      k[i] = left;
      std::vector<double> p(m);
      for (std::size_t j = 0; j < m; ++j) p[j] = static_cast<double>(k[j]) / static_cast<double>(r);
      out.push_back(MixingRatio::normalized(std::move(p)));
      return;
    }
    for (long v = 0; v <= left; ++v) {
      k[i] = v;
      rec(i + 1, left - v);
    }
  };
  rec(0, r);
  return out;
}

FitDataset build_fit_dataset(const ExperimentConfig& config, const ExperimentData& data,
                             std::uint64_t seed) {
  const Scales scales = resolve_scales(config, data);
  const CostSpec cost = resolve_cost(config, data);
  const auto ratios = grid_ratios(data.pilots.size(), config.grid_resolution);
  const long n[2] = {scales.n0, scales.n1};

  struct Slot {
    std::optional<TrainingTuple> tuple;
    std::string skipped;
  };
  std::vector<Slot> slots(ratios.size() * 2);
  parallel_for(slots.size(), [&](std::size_t idx) {
    const std::size_t k = idx / 2;
    const int s = static_cast<int>(idx % 2);
    const std::uint64_t base = mix_seed(mix_seed(seed, static_cast<std::uint64_t>(s)), k);
    auto composer = [&](int rep) {
      return compose(data.pilots, MixtureSpec{static_cast<std::size_t>(n[s]), ratios[k],
                                              mix_seed(base, static_cast<std::uint64_t>(rep))});
    };
    try {
      // OT and accuracy are averaged over the same replicate compositions.
      double ot = 0.0;
      auto measured = [&](int rep) {
        Dataset train = composer(rep);
        ot += transport(train, data.val, cost, config.sinkhorn, config.solver).cost;
        return train;
      };
      LearnerSpec learner = config.learner;
      learner.seed = mix_seed(learner.seed, base);
      const double acc = replicate_accuracy(learner, measured, data.val, config.replicates);
      ot /= static_cast<double>(config.replicates);
      slots[idx].tuple = TrainingTuple{ratios[k], n[s], ot, acc};
    } catch (const InsufficientDataError& e) {
      slots[idx].skipped = e.what();
    }
  });

  FitDataset fit{scales.n0, scales.n1, {}, {}};
  std::size_t skipped = 0;
  for (std::size_t idx = 0; idx < slots.size(); ++idx) {
    if (!slots[idx].tuple) {
      ++skipped;
      std::cerr << "warning: skipping infeasible composition: " << slots[idx].skipped << '\n';
      continue;
    }
    (idx % 2 == 0 ? fit.tuples0 : fit.tuples1).push_back(std::move(*slots[idx].tuple));
  }
  if (static_cast<double>(slots.size() - skipped) < 0.8 * static_cast<double>(slots.size()))
    throw FeasibilityError("fewer than 80% of grid compositions are feasible");
  return fit;
}

std::pair<std::vector<TrainingTuple>, std::vector<TrainingTuple>> extrapolation_split(
    std::span<const TrainingTuple> tuples, std::size_t source_index, double cap) {
  if (!(cap > 0.0 && cap < 1.0)) throw ConfigError("cap must lie in (0,1)");
  std::pair<std::vector<TrainingTuple>, std::vector<TrainingTuple>> out;
  for (const auto& t : tuples) {
    if (source_index >= t.ratio.size()) throw DimensionError("split source index out of range");
    (t.ratio[source_index] < cap ? out.first : out.second).push_back(t);
  }
  if (out.first.empty() || out.second.empty())
    throw SplitError("extrapolation split leaves an empty side");
  return out;
}

ScalePair fit_scale_pair(PredictorKind kind, const FitDataset& fit, const CostSpec& cost) {
  ScalePair pair;
  pair.n0 = fit.n0;
  pair.n1 = fit.n1;
  pair.cost_spec = cost;
  pair.model0 = fit_baseline(kind, fit.tuples0);
  pair.model1 = fit_baseline(kind, fit.tuples1);
  pair.validate();
  return pair;
}

// ---------------------------------------------------------------------------
// Evaluation

double mae_points(std::span<const double> predicted, std::span<const double> actual) {
  if (predicted.size() != actual.size()) throw SizeError("MAE inputs differ in length");
  if (predicted.empty()) throw SizeError("MAE of an empty list");
  double sum = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) sum += std::abs(predicted[i] - actual[i]);
  return 100.0 * sum / static_cast<double>(predicted.size());
}

double evaluate_mae(const PredictorModel& model, std::span<const TrainingTuple> tuples) {
  std::vector<double> pred, actual;
  for (const auto& t : tuples) {
    pred.push_back(std::clamp(predict_performance(model, t.ratio, t.ot_distance, t.budget), 0.0, 1.0));
    actual.push_back(t.performance);
  }
  return mae_points(pred, actual);
}

std::optional<PredictorModel> try_fit(PredictorKind kind, std::span<const TrainingTuple> train,
                                      std::string* failure) {
  try {
    return fit_baseline(kind, train);
  } catch (const Error& e) {
    if (failure) *failure = e.what();
    return std::nullopt;
  }
}

std::vector<PredictorScore> score_predictors(std::span<const PredictorKind> kinds,
                                             std::span<const TrainingTuple> train,
                                             std::span<const TrainingTuple> test) {
  std::vector<PredictorScore> out;
  for (auto kind : kinds) {
    PredictorScore s;
    s.kind = kind;
    if (auto model = try_fit(kind, train, &s.failure)) {
      s.fitted = true;
      s.train_mae = evaluate_mae(*model, train);
      s.test_mae = evaluate_mae(*model, test);
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<EfficiencyRow> efficiency_curve(std::span<const PredictorKind> kinds,
                                            std::span<const TrainingTuple> train,
                                            std::span<const TrainingTuple> test,
                                            std::span<const std::size_t> counts,
                                            std::uint64_t seed) {
  std::vector<EfficiencyRow> rows;
  for (std::size_t count : counts) {
    if (count > train.size())
      throw SizeError("efficiency count " + std::to_string(count) + " exceeds available tuples");
    std::vector<std::size_t> idx(train.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(mix_seed(seed, count));
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(count);
    std::sort(idx.begin(), idx.end());
    std::vector<TrainingTuple> subset;
    for (auto i : idx) subset.push_back(train[i]);
    for (auto kind : kinds) {
      EfficiencyRow row{count, kind, false, 0.0};
      if (auto model = try_fit(kind, subset)) {
        row.fitted = true;
        row.test_mae = evaluate_mae(*model, test);
      }
      rows.push_back(row);
    }
  }
  return rows;
}

SubsetUtility coalition_utility(const ExperimentConfig& config, const ExperimentData& data,
                                long n, std::uint64_t seed) {
  return [&config, &data, n, seed](std::uint32_t mask) -> double {
    const std::size_t m = data.pilots.size();
    std::vector<double> w(m, 0.0);
    for (std::size_t i = 0; i < m; ++i)
      if (mask & (1u << i)) w[i] = 1.0;
    if (mask == 0) return 0.0;
    const MixingRatio ratio = MixingRatio::normalized(std::move(w));
    const std::uint64_t base = mix_seed(seed, 0xc0a1 + mask);
    auto composer = [&](int rep) {
      return compose(data.pilots, MixtureSpec{static_cast<std::size_t>(n), ratio,
                                              mix_seed(base, static_cast<std::uint64_t>(rep))});
    };
    LearnerSpec learner = config.learner;
    learner.seed = mix_seed(learner.seed, base);
    return replicate_accuracy(learner, composer, data.val, config.replicates);
  };
}

std::vector<CompareRow> compare_predictors(const ExperimentConfig& config,
                                           const ExperimentData& data, const FitDataset& fit,
                                           std::uint64_t seed) {
  auto [train, test] = extrapolation_split(fit.tuples1, config.extrapolation_source,
                                           config.extrapolation_cap);
  std::vector<CompareRow> rows;
  for (auto kind : config.predictors) {
    CompareRow row;
    row.score.kind = kind;
    std::optional<PredictorModel> model;
    std::optional<MixingRatio> value_ratio;
    if (kind == PredictorKind::LOO || kind == PredictorKind::Shapley) {
      try {
        const auto utility = coalition_utility(config, data, fit.n1, seed);
        const auto values = kind == PredictorKind::LOO
                                ? loo_values(utility, data.pilots.size())
                                : shapley_values(utility, data.pilots.size());
        model = value_model(kind, values, train);
        value_ratio = selection_ratio_from_values(values).ratio;
      } catch (const Error& e) {
        row.score.failure = e.what();
      }
    } else {
      model = try_fit(kind, train, &row.score.failure);
    }
    if (model) {
      row.score.fitted = true;
      row.score.train_mae = evaluate_mae(*model, train);
      row.score.test_mae = evaluate_mae(*model, test);
      if (value_ratio) {
        row.chosen = *value_ratio;
        const std::uint64_t base = mix_seed(seed, 0x5e1ec7);
        auto composer = [&](int rep) {
          return compose(data.pilots, MixtureSpec{static_cast<std::size_t>(fit.n1), *value_ratio,
                                                  mix_seed(base, static_cast<std::uint64_t>(rep))});
        };
        LearnerSpec learner = config.learner;
        learner.seed = mix_seed(learner.seed, base);
        row.chosen_actual = replicate_accuracy(learner, composer, data.val, config.replicates);
      } else {
        double best = -std::numeric_limits<double>::infinity();
        for (const auto& t : fit.tuples1) {
          const double v = predict_performance(*model, t.ratio, t.ot_distance, t.budget);
          if (v > best) {
            best = v;
            row.chosen = t.ratio;
            row.chosen_actual = t.performance;
          }
        }
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// CSV

void write_tuples_csv(const std::string& path, std::span<const TrainingTuple> tuples) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path);
  out.precision(17);
  const std::size_t m = tuples.empty() ? 0 : tuples.front().ratio.size();
  for (std::size_t i = 0; i < m; ++i) out << "ratio_" << i << ',';
  out << "budget,ot_distance,performance\n";
  for (const auto& t : tuples) {
    for (std::size_t i = 0; i < m; ++i) out << t.ratio[i] << ',';
    out << t.budget << ',' << t.ot_distance << ',' << t.performance << '\n';
  }
}

std::vector<TrainingTuple> read_tuples_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ": empty file");
  const auto columns = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
  if (columns < 4) throw ParseError(path + ": bad header");
  const std::size_t m = columns - 3;
  std::vector<TrainingTuple> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != columns) throw ParseError(path + ": ragged row");
    try {
      std::vector<double> p(m);
      for (std::size_t i = 0; i < m; ++i) p[i] = std::stod(cells[i]);
      out.push_back({MixingRatio(std::move(p)), std::stol(cells[m]), std::stod(cells[m + 1]),
                     std::stod(cells[m + 2])});
    } catch (const std::logic_error&) {
      throw ParseError(path + ": malformed number");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Threads

unsigned worker_count() {
  unsigned n = 0;
  if (const char* env = std::getenv("PROJEKTOR_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v > 0) n = static_cast<unsigned>(v);
  }
  if (n == 0) n = std::max(1u, std::thread::hardware_concurrency());
  return n;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(worker_count(), n));
  std::vector<std::exception_ptr> errors(n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        body(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            body(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace projektor
