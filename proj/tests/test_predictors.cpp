#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>

#include "projektor/errors.hpp"
#include "projektor/predictors.hpp"
#include "support.hpp"

using namespace projektor;
using testing_support::Gen;

namespace {

std::vector<TrainingTuple> random_tuples(Gen& gen, std::size_t count, std::size_t m,
                                         bool vary_budget = true) {
  std::vector<TrainingTuple> out;
  for (std::size_t k = 0; k < count; ++k) {
    TrainingTuple t;
    t.ratio = gen.ratio(m);
    t.budget = vary_budget ? gen.integer(50, 5000) : 300;
    t.ot_distance = gen.uniform(0.5, 20.0);
    t.performance = gen.uniform(0.2, 0.95);
    out.push_back(t);
  }
  return out;
}

Eigen::MatrixXd design(PredictorKind kind, const std::vector<TrainingTuple>& tuples) {
  const auto k = static_cast<Eigen::Index>(parameter_count(kind, tuples.front().ratio.size()));
  Eigen::MatrixXd x(static_cast<Eigen::Index>(tuples.size()), k);
  for (std::size_t r = 0; r < tuples.size(); ++r)
    x.row(static_cast<Eigen::Index>(r)) =
        design_row(kind, tuples[r].ratio, tuples[r].ot_distance, tuples[r].budget);
  return x;
}

Eigen::VectorXd as_vector(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

TEST(ParameterCount, ByKind) {
  EXPECT_EQ(parameter_count(PredictorKind::CS, 3), 2u);
  EXPECT_EQ(parameter_count(PredictorKind::PQ, 3), 14u);
  EXPECT_EQ(parameter_count(PredictorKind::Linear, 3), 5u);
  EXPECT_EQ(parameter_count(PredictorKind::PseudoQuadratic, 3), 8u);
  EXPECT_EQ(parameter_count(PredictorKind::Quadratic, 3), 14u);
  EXPECT_EQ(parameter_count(PredictorKind::Rational, 3), 10u);
  EXPECT_EQ(parameter_count(PredictorKind::Shapley, 4), 6u);
  for (auto k : {PredictorKind::CS, PredictorKind::PQ, PredictorKind::Linear,
                 PredictorKind::PseudoQuadratic, PredictorKind::Quadratic,
                 PredictorKind::Rational, PredictorKind::LOO, PredictorKind::Shapley})
    EXPECT_EQ(predictor_kind_from_string(to_string(k)), k);
  EXPECT_THROW(predictor_kind_from_string("cubic"), ConfigError);
}

TEST(Predict, Examples) {
  const MixingRatio p({0.2, 0.3, 0.5});
  EXPECT_DOUBLE_EQ(predict(PredictorModel{PredictorKind::CS, 3, {0.0, 0.7}}, p, 12.0, 100), 0.7);
  const PredictorModel lin{PredictorKind::Linear, 3, {0.1, 0.2, 0.3, 0.0, 0.5}};
  EXPECT_DOUBLE_EQ(predict(lin, MixingRatio({1, 0, 0}), 0.0, 10), 0.6);
  const PredictorModel rat{PredictorKind::Rational, 2, {1, 1, 1, 1, 0}};
  EXPECT_DOUBLE_EQ(predict(rat, MixingRatio({0.5, 0.5}), 0.0, 10), 2.0);
  EXPECT_THROW(predict(lin, MixingRatio({0.5, 0.5}), 0.0, 10), DimensionError);
  EXPECT_THROW(predict(lin, p, 0.0, 0), DimensionError);
}

TEST(Predict, CsIsAffineInDistance) {
  Gen gen(50);
  for (int trial = 0; trial < 100; ++trial) {
    const PredictorModel cs{PredictorKind::CS, 2, {gen.normal(), gen.normal()}};
    const MixingRatio p = gen.ratio(2);
    const double d1 = gen.uniform(0, 10), d2 = gen.uniform(0, 10), al = gen.uniform();
    const double lhs = predict(cs, p, al * d1 + (1 - al) * d2, 100);
    const double rhs = al * predict(cs, p, d1, 100) + (1 - al) * predict(cs, p, d2, 100);
    EXPECT_NEAR(lhs, rhs, 1e-14 * (1 + std::abs(lhs)));
  }
}

TEST(FitCs, PlantedLineRecoveredExactly) {
  std::vector<TrainingTuple> t;
  for (int k = 0; k < 12; ++k)
    t.push_back({MixingRatio({0.5, 0.5}), 100, 10.0 + 7.5 * k, -0.002 * (10.0 + 7.5 * k) + 0.9});
  const auto model = fit_cs(t);
  EXPECT_NEAR(model.params[0], -0.002, 1e-10);
  EXPECT_NEAR(model.params[1], 0.9, 1e-10);
  EXPECT_NEAR(model.fit_residual, 0.0, 1e-12);
}

TEST(FitCs, ConstantPerformance) {
  std::vector<TrainingTuple> t;
  for (int k = 0; k < 5; ++k) t.push_back({MixingRatio({1.0}), 10, 1.0 + k, 0.5});
  const auto model = fit_cs(t);
  EXPECT_NEAR(model.params[0], 0.0, 1e-14);
  EXPECT_NEAR(model.params[1], 0.5, 1e-14);
}

TEST(FitCs, MatchesNormalEquationOracle) {
  Gen gen(51);
  for (int trial = 0; trial < 50; ++trial) {
    const auto t = random_tuples(gen, 5, 2);
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (const auto& r : t) {
      sx += r.ot_distance;
      sy += r.performance;
      sxx += r.ot_distance * r.ot_distance;
      sxy += r.ot_distance * r.performance;
    }
    const double n = 5.0, det = n * sxx - sx * sx;
    const double a1 = (n * sxy - sx * sy) / det, a0 = (sxx * sy - sx * sxy) / det;
    const auto model = fit_cs(t);
    EXPECT_NEAR(model.params[0], a1, 1e-9);
    EXPECT_NEAR(model.params[1], a0, 1e-9);
  }
}

TEST(FitCs, Errors) {
  std::vector<TrainingTuple> same{{MixingRatio({1.0}), 1, 3.0, 0.4}, {MixingRatio({1.0}), 1, 3.0, 0.6}};
  EXPECT_THROW(fit_cs(same), RankDeficiencyError);
  EXPECT_THROW(fit_cs(std::span<const TrainingTuple>(same.data(), 1)), SizeError);
}

// Planted parameters are identifiable only up to the design's null space
// (sum p = 1 ties several columns together), so the minimum-norm fit is
// compared against the planted vector's projection onto the row space.
TEST(FitPq, PlantedParametersRecoveredOnRowSpace) {
  Gen gen(52);
  for (int trial = 0; trial < 10; ++trial) {
    auto t = random_tuples(gen, 60, 3);
    Eigen::VectorXd theta(14);
    for (Eigen::Index k = 0; k < 14; ++k) theta[k] = gen.normal(0.1);
    const Eigen::MatrixXd x = design(PredictorKind::PQ, t);
    const Eigen::VectorXd y = x * theta;
    for (std::size_t r = 0; r < t.size(); ++r) t[r].performance = y[static_cast<Eigen::Index>(r)];
    const auto model = fit_pq(t);
    const Eigen::VectorXd expect = testing_support::row_space_projection(x, theta);
    EXPECT_LE((as_vector(model.params) - expect).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_TRUE(model.rank_deficient);
    EXPECT_LE(model.fit_residual, 1e-10);
  }
}

TEST(FitQuadratic, PlantedParametersRecoveredOnRowSpace) {
  Gen gen(53);
  for (int trial = 0; trial < 10; ++trial) {
    auto t = random_tuples(gen, 60, 3);
    Eigen::VectorXd theta(14);
    for (Eigen::Index k = 0; k < 14; ++k) theta[k] = gen.normal(0.1);
    const Eigen::MatrixXd x = design(PredictorKind::Quadratic, t);
    const Eigen::VectorXd y = x * theta;
    for (std::size_t r = 0; r < t.size(); ++r) t[r].performance = y[static_cast<Eigen::Index>(r)];
    const auto model = fit_baseline(PredictorKind::Quadratic, t);
    const Eigen::VectorXd expect = testing_support::row_space_projection(x, theta);
    EXPECT_LE((as_vector(model.params) - expect).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(FitPq, FixedRatioCollapsesToCs) {
  Gen gen(54);
  std::vector<TrainingTuple> t;
  const MixingRatio p({0.2, 0.5, 0.3});
  for (int k = 0; k < 20; ++k) t.push_back({p, 100, gen.uniform(1, 10), gen.uniform(0.3, 0.9)});
  const auto pq = fit_pq(t), cs = fit_cs(t);
  for (const auto& r : t)
    EXPECT_NEAR(predict(pq, r.ratio, r.ot_distance, r.budget),
                predict(cs, r.ratio, r.ot_distance, r.budget), 1e-8);
}

TEST(FitPq, ConstantPerformance) {
  Gen gen(55);
  auto t = random_tuples(gen, 30, 3);
  for (auto& r : t) r.performance = 0.625;
  const auto model = fit_pq(t);
  for (int k = 0; k < 10; ++k)
    EXPECT_NEAR(predict(model, gen.ratio(3), gen.uniform(0, 20), 100), 0.625, 1e-9);
}

TEST(Fits, ResidualNesting) {
  Gen gen(56);
  for (int trial = 0; trial < 20; ++trial) {
    const auto t = random_tuples(gen, 40, 3);
    EXPECT_LE(fit_pq(t).fit_residual, fit_cs(t).fit_residual + 1e-9);
    EXPECT_LE(fit_baseline(PredictorKind::Quadratic, t).fit_residual,
              fit_baseline(PredictorKind::PseudoQuadratic, t).fit_residual + 1e-9);
  }
}

TEST(FitLinear, SymmetricDataGivesEqualCoefficients) {
  Gen gen(57);
  std::vector<TrainingTuple> t;
  for (int k = 0; k < 8; ++k) {
    auto base = gen.ratio(3).vector();
    std::sort(base.begin(), base.end());
    const double perf = 0.5 + 0.3 * base[2] - 0.1 * base[0];
    const long n = gen.integer(100, 1000);
    do t.push_back({MixingRatio(base), n, 0.0, perf + 0.01 * std::log(n)});
    while (std::next_permutation(base.begin(), base.end()));
  }
  const auto model = fit_baseline(PredictorKind::Linear, t);
  EXPECT_NEAR(model.params[0], model.params[1], 1e-6);
  EXPECT_NEAR(model.params[1], model.params[2], 1e-6);
}

TEST(FitBaseline, TooFewTuples) {
  Gen gen(58);
  const auto t = random_tuples(gen, 4, 3);
  EXPECT_THROW(fit_baseline(PredictorKind::Linear, t), SizeError);
  EXPECT_THROW(fit_baseline(PredictorKind::LOO, random_tuples(gen, 10, 3)), ConfigError);
}

TEST(FitRational, ScalarCaseFitsMeanOfTransformedTargets) {
  Gen gen(59);
  std::vector<TrainingTuple> t;
  double mean_z = 0.0;
  for (int k = 0; k < 10; ++k) {
    const double acc = gen.uniform(0.6, 0.9);
    t.push_back({MixingRatio({1.0}), 300, 1.0, acc});
    mean_z += std::log(1.0 - acc) / 10.0;
  }
  const auto model = fit_baseline(PredictorKind::Rational, t);
  EXPECT_NEAR(predict(model, MixingRatio({1.0}), 0.0, 300), mean_z, 1e-6);
  EXPECT_NEAR(predict_performance(model, MixingRatio({1.0}), 0.0, 300), 1.0 - std::exp(mean_z), 1e-6);
}

TEST(FitRational, RecoversPlantedModelPredictions) {
  Gen gen(60);
  const PredictorModel planted{PredictorKind::Rational, 2, {-4.0, -1.0, -0.5, -3.0, -0.05}};
  std::vector<TrainingTuple> t;
  for (int k = 0; k < 30; ++k) {
    const MixingRatio p = gen.ratio(2);
    const long n = gen.integer(100, 2000);
    t.push_back({p, n, 0.0, predict_performance(planted, p, 0.0, n)});
  }
  const auto model = fit_baseline(PredictorKind::Rational, t);
  EXPECT_LE(model.fit_residual, 1e-6);
  for (const auto& r : t)
    EXPECT_NEAR(predict_performance(model, r.ratio, 0.0, r.budget), r.performance, 1e-5);
  // Deterministic given tuples and seed.
  EXPECT_EQ(fit_baseline(PredictorKind::Rational, t).params, model.params);
}

TEST(Loo, Examples) {
  auto card = [](std::uint32_t s) { return static_cast<double>(std::popcount(s)); };
  for (double v : loo_values(card, 4)) EXPECT_DOUBLE_EQ(v, 1.0);
  for (double v : loo_values([](std::uint32_t) { return 3.0; }, 3)) EXPECT_DOUBLE_EQ(v, 0.0);
  const double table[8] = {0.0, 0.5, 0.4, 0.7, 0.3, 0.6, 0.55, 0.8};
  const auto v = loo_values([&](std::uint32_t s) { return table[s]; }, 3);
  EXPECT_DOUBLE_EQ(v[0], 0.8 - 0.55);
  EXPECT_DOUBLE_EQ(v[1], 0.8 - 0.6);
  EXPECT_DOUBLE_EQ(v[2], 0.8 - 0.7);
}

TEST(Shapley, AdditiveGameIsExact) {
  Gen gen(60);
  for (int trial = 0; trial < 30; ++trial) {
    const int m = gen.integer(1, 8);
    std::vector<double> w(static_cast<std::size_t>(m));
    for (auto& x : w) x = gen.integer(-50, 50);
    const auto phi = shapley_values(
        [&](std::uint32_t s) {
          double acc = 0;
          for (int i = 0; i < m; ++i)
            if (s >> i & 1u) acc += w[static_cast<std::size_t>(i)];
          return acc;
        },
        static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) EXPECT_EQ(phi[static_cast<std::size_t>(i)], w[static_cast<std::size_t>(i)]);
  }
}

TEST(Shapley, AxiomsOnRandomTables) {
  Gen gen(61);
  for (int trial = 0; trial < 100; ++trial) {
    const int m = gen.integer(1, 6);
    std::vector<double> table(1u << m);
    for (auto& x : table) x = gen.normal();
    // Make sources 0 and 1 interchangeable on even trials.
    if (m >= 2 && trial % 2 == 0)
      for (std::uint32_t s = 0; s < table.size(); ++s)
        if ((s & 1u) && !(s & 2u)) table[(s & ~1u) | 2u] = table[s];
    const SubsetUtility v = [&](std::uint32_t s) { return table[s]; };
    const auto phi = shapley_values(v, static_cast<std::size_t>(m));
    double sum = 0;
    for (double x : phi) sum += x;
    EXPECT_NEAR(sum, table.back() - table.front(), 1e-12);
    if (m >= 2 && trial % 2 == 0) {
      EXPECT_NEAR(phi[0], phi[1], 1e-12);
    }
    const auto oracle = testing_support::shapley_by_permutations(v, m);
    for (int i = 0; i < m; ++i) EXPECT_NEAR(phi[static_cast<std::size_t>(i)], oracle[static_cast<std::size_t>(i)], 1e-12);
  }
}

TEST(Shapley, SymmetricUtilityAndLimits) {
  const auto phi = shapley_values([](std::uint32_t s) { return std::sqrt(std::popcount(s)); }, 5);
  for (double x : phi) EXPECT_NEAR(x, phi[0], 1e-15);
  EXPECT_THROW(shapley_values([](std::uint32_t) { return 0.0; }, 13), SizeError);
}

TEST(SelectionRatio, Examples) {
  EXPECT_EQ(selection_ratio_from_values(std::vector<double>{2, 0, 0}).ratio.vector(),
            (std::vector<double>{1, 0, 0}));
  const auto r = selection_ratio_from_values(std::vector<double>{3, 1, -2});
  EXPECT_NEAR(r.ratio[0], 0.75, 1e-15);
  EXPECT_NEAR(r.ratio[1], 0.25, 1e-15);
  EXPECT_EQ(r.ratio[2], 0.0);
  EXPECT_FALSE(r.fallback_uniform);
  const auto third = selection_ratio_from_values(std::vector<double>{1, 1, 1});
  for (double x : third.ratio.values()) EXPECT_NEAR(x, 1.0 / 3, 1e-15);
  const auto neg = selection_ratio_from_values(std::vector<double>{-1, 0});
  EXPECT_TRUE(neg.fallback_uniform);
  EXPECT_EQ(neg.ratio.vector(), (std::vector<double>{0.5, 0.5}));
}

TEST(ValueModel, UsesValuesAsCoefficients) {
  const std::vector<double> values{0.1, 0.3};
  const auto model = value_model(PredictorKind::Shapley, values);
  EXPECT_EQ(model.params, (std::vector<double>{0.1, 0.3, 0.0, 0.0}));
  std::vector<TrainingTuple> t;
  for (long n : {100L, 200L, 400L, 800L})
    t.push_back({MixingRatio({0.5, 0.5}), n, 0.0, 0.2 + 0.05 * std::log(n) + 0.2});
  const auto fitted = value_model(PredictorKind::LOO, values, t);
  EXPECT_NEAR(fitted.params[2], 0.05, 1e-10);
  EXPECT_NEAR(fitted.params[3], 0.2, 1e-10);
}

TEST(ModelJson, RoundTripIsBitExact) {
  Gen gen(62);
  for (int trial = 0; trial < 50; ++trial) {
    PredictorModel m{PredictorKind::PQ, 3, {}, gen.uniform(), trial % 2 == 0};
    for (int k = 0; k < 14; ++k) m.params.push_back(gen.normal() * std::pow(10.0, gen.integer(-20, 20)));
    EXPECT_EQ(model_from_json(nlohmann::json::parse(to_json(m).dump())), m);
  }
  const auto path = (std::filesystem::temp_directory_path() / "projektor_model_test.json").string();
  const PredictorModel cs{PredictorKind::CS, 2, {0.1 / 3, 2.0 / 7}, 0.01, false};
  save_model(path, cs);
  EXPECT_EQ(load_model(path), cs);
  std::remove(path.c_str());
  EXPECT_THROW(model_from_json(nlohmann::json{{"kind", "cs"}, {"m", 2}, {"params", {1.0}}}), ParseError);
  EXPECT_THROW(load_model("/nonexistent/model.json"), ParseError);
}
