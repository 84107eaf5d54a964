#include "cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "projektor/errors.hpp"
#include "projektor/harness.hpp"

namespace projektor {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
  bool dump_transport = false;

  std::string kind;
  std::string ratio;
  int scale = 1;
  std::vector<long> targets;
  long budget = 0;
};

struct UsageError : Error {
  using Error::Error;
};

std::string path_in(const Options& o, const std::string& name) {
  return (fs::path(o.out_dir) / name).string();
}

void write_json(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path);
  out << j.dump(2) << '\n';
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

std::string ratio_string(const MixingRatio& r) {
  std::ostringstream s;
  s.precision(17);
  for (std::size_t i = 0; i < r.size(); ++i) s << (i ? ";" : "") << r[i];
  return s.str();
}

MixingRatio parse_ratio(const std::string& text) {
  std::vector<double> p;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      p.push_back(std::stod(cell));
    } catch (const std::logic_error&) {
      throw UsageError("malformed ratio '" + text + "'");
    }
  }
  return MixingRatio(std::move(p));
}

std::vector<PredictorKind> fittable(const ExperimentConfig& c) {
  std::vector<PredictorKind> out;
  for (auto k : c.predictors)
    if (k != PredictorKind::LOO && k != PredictorKind::Shapley) out.push_back(k);
  return out;
}

PredictorKind chosen_kind(const Options& o, const ExperimentConfig& c) {
  if (!o.kind.empty()) return predictor_kind_from_string(o.kind);
  const auto kinds = fittable(c);
  if (kinds.empty()) throw ConfigError("config lists no fittable predictor");
  return kinds.front();
}

struct Context {
  ExperimentConfig config;
  std::uint64_t seed = 0;
  ExperimentData data;
  CostSpec cost;
  Scales scales{};
};

Context load_context(const Options& o) {
  if (o.config_path.empty()) throw UsageError("--config is required");
  Context ctx;
  ctx.config = load_config(o.config_path);
  ctx.seed = o.seed.value_or(ctx.config.seeds.front());
  ctx.data = materialize(ctx.config, ctx.seed);
  ctx.cost = resolve_cost(ctx.config, ctx.data);
  ctx.scales = resolve_scales(ctx.config, ctx.data);
  return ctx;
}

json pair_to_json(const ScalePair& pair) {
  return json{{"n0", pair.n0},
              {"n1", pair.n1},
              {"label_weight", pair.cost_spec.label_weight},
              {"metric", pair.cost_spec.feature_metric == FeatureMetric::Euclidean ? "euclidean"
                                                                                   : "sqeuclidean"},
              {"model0", to_json(pair.model0)},
              {"model1", to_json(pair.model1)}};
}

ScalePair pair_from_json(const json& j) {
  try {
    ScalePair pair;
    pair.n0 = j.at("n0").get<long>();
    pair.n1 = j.at("n1").get<long>();
    pair.cost_spec.label_weight = j.at("label_weight").get<double>();
    pair.cost_spec.feature_metric = j.at("metric").get<std::string>() == "euclidean"
                                        ? FeatureMetric::Euclidean
                                        : FeatureMetric::SquaredEuclidean;
    pair.model0 = model_from_json(j.at("model0"));
    pair.model1 = model_from_json(j.at("model1"));
    pair.validate();
    return pair;
  } catch (const json::exception& e) {
    throw ParseError(std::string("scale pair json: ") + e.what());
  }
}

std::string pair_file(PredictorKind kind) { return "pair_" + std::string(to_string(kind)) + ".json"; }

FitDataset fit_dataset_for(const Options& o, const Context& ctx) {
  const auto path = path_in(o, "fit_dataset.csv");
  if (fs::exists(path)) {
    FitDataset fit{ctx.scales.n0, ctx.scales.n1, {}, {}};
    for (auto& t : read_tuples_csv(path))
      (t.budget == ctx.scales.n0 ? fit.tuples0 : fit.tuples1).push_back(std::move(t));
    return fit;
  }
  return build_fit_dataset(ctx.config, ctx.data, ctx.seed);
}

ScalePair pair_for(const Options& o, const Context& ctx, PredictorKind kind) {
  const auto path = path_in(o, pair_file(kind));
  if (fs::exists(path)) return pair_from_json(read_json(path));
  return fit_scale_pair(kind, fit_dataset_for(o, ctx), ctx.cost);
}

// --- subcommands -------------------------------------------------------------

int cmd_gen(const Options& o, std::ostream& out) {
  const Context ctx = load_context(o);
  for (std::size_t i = 0; i < ctx.data.full.size(); ++i) {
    const auto& id = ctx.config.sources[i].id;
    write_dataset_csv(path_in(o, id + "_full.csv"), ctx.data.full[i]);
    write_dataset_csv(path_in(o, id + "_pilot.csv"), ctx.data.pilots[i]);
  }
  write_dataset_csv(path_in(o, ctx.config.val.id + ".csv"), ctx.data.val);
  out << "wrote " << ctx.data.full.size() << " sources and validation data to " << o.out_dir << '\n';
  return 0;
}

int cmd_fit(const Options& o, std::ostream& out, std::ostream& err) {
  const Context ctx = load_context(o);
  const FitDataset fit = build_fit_dataset(ctx.config, ctx.data, ctx.seed);
  std::vector<TrainingTuple> all = fit.tuples0;
  all.insert(all.end(), fit.tuples1.begin(), fit.tuples1.end());
  write_tuples_csv(path_in(o, "fit_dataset.csv"), all);
  int status = 0;
  for (auto kind : fittable(ctx.config)) {
    try {
      const ScalePair pair = fit_scale_pair(kind, fit, ctx.cost);
      write_json(path_in(o, pair_file(kind)), pair_to_json(pair));
      out << to_string(kind) << ": residual n0 " << pair.model0.fit_residual << ", n1 "
          << pair.model1.fit_residual << '\n';
    } catch (const Error& e) {
      err << "fit " << to_string(kind) << " failed: " << e.what() << '\n';
      status = 2;
    }
  }
  if (o.dump_transport) {
    const MixingRatio u = MixingRatio::uniform(ctx.data.pilots.size());
    const long n[2] = {fit.n0, fit.n1};
    for (int s = 0; s < 2; ++s) {
      const Dataset train = compose(ctx.data.pilots, MixtureSpec{static_cast<std::size_t>(n[s]), u,
                                                                 mix_seed(ctx.seed, 0x7d + s)});
      write_transport_csv(path_in(o, "transport_n" + std::to_string(s) + ".csv"),
                          transport(train, ctx.data.val, ctx.cost, ctx.config.sinkhorn,
                                    ctx.config.solver, true));
    }
  }
  out << "fit " << all.size() << " tuples at n0=" << fit.n0 << ", n1=" << fit.n1 << '\n';
  return status;
}

int cmd_predict(const Options& o, std::ostream& out) {
  const Context ctx = load_context(o);
  if (o.ratio.empty()) throw UsageError("predict needs --ratio");
  if (o.scale != 0 && o.scale != 1) throw UsageError("--scale must be 0 or 1");
  const PredictorKind kind = chosen_kind(o, ctx.config);
  const ScalePair pair = pair_for(o, ctx, kind);
  const MixingRatio ratio = parse_ratio(o.ratio);
  const long n = o.scale == 0 ? pair.n0 : pair.n1;
  const Dataset train = compose(ctx.data.pilots,
                                MixtureSpec{static_cast<std::size_t>(n), ratio, mix_seed(ctx.seed, 0x9d)});
  const TransportResult ot = transport(train, ctx.data.val, pair.cost_spec, ctx.config.sinkhorn,
                                       ctx.config.solver);
  const auto& model = o.scale == 0 ? pair.model0 : pair.model1;
  const json result{{"kind", std::string(to_string(kind))},
                    {"budget", n},
                    {"ratio", ratio.vector()},
                    {"ot_distance", ot.cost},
                    {"prediction", predict_performance(model, ratio, ot.cost, n)}};
  out << result.dump(2) << '\n';
  return 0;
}

int cmd_project(const Options& o, std::ostream& out) {
  const Context ctx = load_context(o);
  const PredictorKind kind = chosen_kind(o, ctx.config);
  const ScalePair pair = pair_for(o, ctx, kind);
  const FitDataset fit = fit_dataset_for(o, ctx);
  std::vector<long> targets = o.targets.empty() ? ctx.config.projection_targets : o.targets;
  if (targets.empty()) targets = {10 * pair.n1};
  if (fit.tuples0.size() != fit.tuples1.size())
    throw ConfigError("fit dataset scales have different ratio sets");

  std::vector<ProjectionRow> rows;
  for (long target : targets) {
    for (std::size_t k = 0; k < fit.tuples1.size(); ++k) {
      const auto& t0 = fit.tuples0[k];
      const auto& t1 = fit.tuples1[k];
      ProjectionRow row{t1.ratio, target,
                        project_query(pair, t1.ratio, target, t0.ot_distance, t1.ot_distance),
                        std::nullopt};
      try {
        const std::uint64_t base = mix_seed(mix_seed(ctx.seed, 0x9a0 + static_cast<std::uint64_t>(target)), k);
        auto composer = [&](int rep) {
          return compose(ctx.data.full, MixtureSpec{static_cast<std::size_t>(target), t1.ratio,
                                                    mix_seed(base, static_cast<std::uint64_t>(rep))});
        };
        LearnerSpec learner = ctx.config.learner;
        learner.seed = mix_seed(learner.seed, base);
        row.actual = replicate_accuracy(learner, composer, ctx.data.val, ctx.config.replicates);
      } catch (const InsufficientDataError&) {
        // Full sources too small for this target: no ground truth.
      }
      rows.push_back(std::move(row));
    }
  }
  write_projection_csv(path_in(o, "projection.csv"), rows);
  std::vector<double> pred, actual;
  for (const auto& r : rows)
    if (r.actual) {
      pred.push_back(std::clamp(r.predicted, 0.0, 1.0));
      actual.push_back(*r.actual);
    }
  out << "projected " << rows.size() << " rows with " << to_string(kind);
  if (!pred.empty()) out << ", MAE " << mae_points(pred, actual) << " points";
  out << '\n';
  return 0;
}

int cmd_select(const Options& o, std::ostream& out) {
  const Context ctx = load_context(o);
  const PredictorKind kind = chosen_kind(o, ctx.config);
  const ScalePair pair = pair_for(o, ctx, kind);
  long budget = o.budget > 0 ? o.budget : ctx.config.selection.budget;
  if (budget <= 0) budget = 10 * pair.n1;
  OptimizerConfig opt = ctx.config.selection.optimizer;
  opt.seed = mix_seed(opt.seed, ctx.seed);
  ProjectedObjective objective(pair, ctx.data.pilots, ctx.data.val, opt.seed, ctx.config.sinkhorn,
                               ctx.config.solver);
  const SelectionResult res = ascend(objective, budget, opt);
  write_trajectory_csv(path_in(o, "trajectory.csv"), res);
  json j = to_json(res);
  j["budget"] = budget;
  j["kind"] = std::string(to_string(kind));
  write_json(path_in(o, "selection.json"), j);
  if (o.dump_transport) {
    const Dataset train = objective.compose_at(res.ratio, 1);
    write_transport_csv(path_in(o, "transport_selected.csv"),
                        transport(train, ctx.data.val, pair.cost_spec, ctx.config.sinkhorn,
                                  ctx.config.solver, true));
  }
  out << "selected " << ratio_string(res.ratio) << " predicted " << res.predicted_performance
      << " after " << res.iterations << " iterations\n";
  return 0;
}

int cmd_budget(const Options& o, std::ostream& out, std::ostream& err) {
  const Context ctx = load_context(o);
  const PredictorKind kind = chosen_kind(o, ctx.config);
  const ScalePair pair = pair_for(o, ctx, kind);
  BudgetSearchConfig cfg{ctx.config.budget_search.target, ctx.config.budget_search.grid,
                         ctx.config.selection.optimizer};
  cfg.inner.seed = mix_seed(cfg.inner.seed, ctx.seed);
  if (cfg.n_grid.empty()) throw ConfigError("budget_search.grid is required");
  ProjectedObjective objective(pair, ctx.data.pilots, ctx.data.val, cfg.inner.seed,
                               ctx.config.sinkhorn, ctx.config.solver);
  try {
    auto [n, res] = search_min_budget(objective, cfg);
    json j = to_json(res);
    j["budget"] = n;
    j["reachable"] = true;
    write_json(path_in(o, "budget.json"), j);
    write_trajectory_csv(path_in(o, "budget_trajectory.csv"), res);
    out << "minimal budget " << n << " reaches " << res.predicted_performance << '\n';
    return 0;
  } catch (const UnreachableTargetError& e) {
    write_json(path_in(o, "budget.json"), json{{"reachable", false},
                                               {"best_budget", e.best_budget()},
                                               {"best_performance", e.best_performance()}});
    err << e.what() << " (best " << e.best_performance() << " at N=" << e.best_budget() << ")\n";
    return 2;
  }
}

int cmd_eval(const Options& o, std::ostream& out) {
  if (o.config_path.empty()) throw UsageError("--config is required");
  const ExperimentConfig config = load_config(o.config_path);
  const std::vector<std::uint64_t> seeds =
      o.seed ? std::vector<std::uint64_t>{*o.seed} : config.seeds;
  const auto kinds = fittable(config);

  std::ofstream mae(path_in(o, "eval_mae.csv"));
  std::ofstream eff(path_in(o, "efficiency.csv"));
  if (!mae || !eff) throw ParseError("cannot write evaluation tables to " + o.out_dir);
  mae.precision(17);
  eff.precision(17);
  mae << "seed,predictor,fitted,train_mae,test_mae\n";
  eff << "seed,count,predictor,fitted,test_mae\n";

  std::map<PredictorKind, std::vector<double>> train_mae, test_mae;
  for (auto seed : seeds) {
    const ExperimentData data = materialize(config, seed);
    const FitDataset fit = build_fit_dataset(config, data, seed);
    auto [train, test] =
        extrapolation_split(fit.tuples1, config.extrapolation_source, config.extrapolation_cap);
    for (const auto& s : score_predictors(kinds, train, test)) {
      mae << seed << ',' << to_string(s.kind) << ',' << s.fitted << ',';
      if (s.fitted) {
        mae << s.train_mae << ',' << s.test_mae;
        train_mae[s.kind].push_back(s.train_mae);
        test_mae[s.kind].push_back(s.test_mae);
      } else {
        mae << ',';
      }
      mae << '\n';
    }
    if (!config.efficiency_counts.empty()) {
      std::vector<std::size_t> counts;
      for (auto c : config.efficiency_counts)
        if (c <= train.size()) counts.push_back(c);
      for (const auto& r : efficiency_curve(kinds, train, test, counts, seed)) {
        eff << seed << ',' << r.count << ',' << to_string(r.kind) << ',' << r.fitted << ',';
        if (r.fitted) eff << r.test_mae;
        eff << '\n';
      }
    }
  }

  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t h = v.size() / 2;
    return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
  };
  std::ofstream summary(path_in(o, "eval_summary.csv"));
  summary.precision(17);
  summary << "predictor,fitted_seeds,median_train_mae,median_test_mae\n";
  out << "predictor           train MAE   test MAE   (median over " << seeds.size() << " seeds, points)\n";
  for (auto kind : kinds) {
    const auto& tr = train_mae[kind];
    summary << to_string(kind) << ',' << tr.size() << ',';
    if (!tr.empty()) {
      summary << median(tr) << ',' << median(test_mae[kind]);
      out << std::left << std::setw(18) << to_string(kind) << std::right << std::setw(10)
          << std::fixed << std::setprecision(3) << median(tr) << std::setw(11)
          << median(test_mae[kind]) << std::defaultfloat << std::setprecision(6) << '\n';
    } else {
      summary << ',';
      out << std::left << std::setw(18) << to_string(kind) << "  unfit\n" << std::right;
    }
    summary << '\n';
  }
  return 0;
}

int cmd_compare(const Options& o, std::ostream& out) {
  if (o.config_path.empty()) throw UsageError("--config is required");
  const ExperimentConfig config = load_config(o.config_path);
  const std::vector<std::uint64_t> seeds =
      o.seed ? std::vector<std::uint64_t>{*o.seed} : config.seeds;
  std::ofstream csv(path_in(o, "compare.csv"));
  if (!csv) throw ParseError("cannot write compare.csv");
  csv.precision(17);
  csv << "seed,predictor,fitted,train_mae,test_mae,chosen_ratio,chosen_actual\n";
  for (auto seed : seeds) {
    const ExperimentData data = materialize(config, seed);
    const FitDataset fit = build_fit_dataset(config, data, seed);
    for (const auto& row : compare_predictors(config, data, fit, seed)) {
      csv << seed << ',' << to_string(row.score.kind) << ',' << row.score.fitted << ',';
      if (row.score.fitted)
        csv << row.score.train_mae << ',' << row.score.test_mae << ','
            << (row.chosen ? ratio_string(*row.chosen) : "") << ',' << row.chosen_actual;
      else
        csv << ",,,";
      csv << '\n';
      out << seed << ' ' << to_string(row.score.kind) << ' '
          << (row.score.fitted ? "test MAE " + std::to_string(row.score.test_mae)
                               : "unfit: " + row.score.failure)
          << '\n';
    }
  }
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Performance prediction, projection and data-mixture selection from pilot data"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  Options o;
  std::uint64_t seed = 0;
  app.add_option("--config", o.config_path, "experiment config JSON")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "run a single seed instead of the config's list");
  app.add_option("--out", o.out_dir, "output directory");
  app.add_flag("--dump-transport", o.dump_transport, "write transport plans and duals as CSV");

  auto* gen = app.add_subcommand("gen", "write source, pilot and validation CSVs");
  auto* fit = app.add_subcommand("fit", "build fitting tuples and fit every configured predictor");
  auto* predict = app.add_subcommand("predict", "evaluate a fitted predictor at one ratio");
  predict->add_option("--kind", o.kind, "predictor kind");
  predict->add_option("--ratio", o.ratio, "comma-separated mixing ratio")->required();
  predict->add_option("--scale", o.scale, "0 for n0, 1 for n1");
  auto* project = app.add_subcommand("project", "project fitted predictions to larger scales");
  project->add_option("--kind", o.kind, "predictor kind");
  project->add_option("--targets", o.targets, "target scales");
  auto* select = app.add_subcommand("select", "fixed-budget mixture optimization");
  select->add_option("--kind", o.kind, "predictor kind");
  select->add_option("--budget", o.budget, "target budget N");
  auto* budget = app.add_subcommand("budget", "smallest budget reaching a target performance");
  budget->add_option("--kind", o.kind, "predictor kind");
  auto* eval = app.add_subcommand("eval", "MAE tables, extrapolation split and efficiency curve");
  auto* compare = app.add_subcommand("compare", "all predictors and baselines side by side");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }
  if (seed_opt->count() > 0) o.seed = seed;

  try {
    if (!o.out_dir.empty()) fs::create_directories(o.out_dir);
    if (gen->parsed()) return cmd_gen(o, out);
    if (fit->parsed()) return cmd_fit(o, out, err);
    if (predict->parsed()) return cmd_predict(o, out);
    if (project->parsed()) return cmd_project(o, out);
    if (select->parsed()) return cmd_select(o, out);
    if (budget->parsed()) return cmd_budget(o, out, err);
    if (eval->parsed()) return cmd_eval(o, out);
    if (compare->parsed()) return cmd_compare(o, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace projektor
