#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>

#include "projektor/errors.hpp"
#include "projektor/learners.hpp"
#include "projektor/projection.hpp"
#include "support.hpp"

using namespace projektor;
using testing_support::Gen;

namespace {

// PQ model whose OT block is zero and whose ratio block reproduces the
// synthetic oracle at scale n: sum_i p_i (c_i - alpha_i log n + q) - q sum p_i^2.
PredictorModel pq_matching(const SyntheticLogLinear& s, long n) {
  const std::size_t m = s.alpha_coeffs.size();
  PredictorModel model{PredictorKind::PQ, m, std::vector<double>(4 * m + 2, 0.0)};
  for (std::size_t i = 0; i < m; ++i) {
    model.params[2 * m + 1 + i] = -s.quad_weight;
    model.params[3 * m + 1 + i] =
        s.c_coeffs[i] - s.alpha_coeffs[i] * std::log(static_cast<double>(n)) + s.quad_weight;
  }
  return model;
}

ScalePair constant_pair(long n0, long n1, double c0, double c1) {
  return ScalePair{n0, n1, PredictorModel{PredictorKind::CS, 3, {0.0, c0}},
                   PredictorModel{PredictorKind::CS, 3, {0.0, c1}}, CostSpec{}};
}

}  // namespace

TEST(Project, Anchors) {
  Gen gen(70);
  for (int trial = 0; trial < 200; ++trial) {
    const long n0 = gen.integer(1, 1000), n1 = n0 + gen.integer(1, 1000);
    const double l0 = gen.uniform(), l1 = gen.uniform();
    EXPECT_NEAR(project(n0, n1, l0, l1, n0), l0, 1e-12);
    EXPECT_NEAR(project(n0, n1, l0, l1, n1), l1, 1e-12);
  }
}

TEST(Project, CollinearExample) {
  EXPECT_NEAR(project(100, 200, 0.6, 0.7, 400), 0.8, 1e-12);
  EXPECT_NEAR(project(100, 200, 0.6, 0.7, 50), 0.5, 1e-12);
}

TEST(Project, NeverClamped) {
  EXPECT_GT(project(100, 200, 0.8, 0.95, 100000), 1.0);
}

TEST(Project, Errors) {
  EXPECT_THROW(project(100, 100, 0.5, 0.6, 200), DegeneracyError);
  EXPECT_THROW(project(100, 200, 0.5, 0.6, 0), DimensionError);
  ScalePair bad = constant_pair(200, 100, 0.5, 0.6);
  EXPECT_THROW(bad.validate(), DegeneracyError);
  ScalePair mixed = constant_pair(100, 200, 0.5, 0.6);
  mixed.model1.kind = PredictorKind::PQ;
  EXPECT_THROW(mixed.validate(), ConfigError);
}

TEST(Project, InterpolationIsBounded) {
  Gen gen(71);
  for (int trial = 0; trial < 500; ++trial) {
    const long n0 = gen.integer(1, 500), n1 = n0 + gen.integer(1, 500);
    const long n = gen.integer(static_cast<int>(n0), static_cast<int>(n1));
    const double l0 = gen.normal(), l1 = gen.normal();
    const double v = project(n0, n1, l0, l1, n);
    EXPECT_GE(v, std::min(l0, l1) - 1e-12);
    EXPECT_LE(v, std::max(l0, l1) + 1e-12);
  }
}

TEST(Project, TwoPointConsistency) {
  Gen gen(72);
  for (int trial = 0; trial < 500; ++trial) {
    const long n0 = gen.integer(1, 500), n1 = n0 + gen.integer(1, 500);
    const long n = n1 + gen.integer(1, 5000);
    const double l0 = gen.normal(), l1 = gen.normal();
    const double ln = project(n0, n1, l0, l1, n);
    EXPECT_NEAR(project(n0, n, l0, ln, n1), l1, 1e-12);
  }
}

TEST(Project, ReproducesLogLinearFunctionsEverywhere) {
  Gen gen(73);
  for (int trial = 0; trial < 200; ++trial) {
    const double alpha = gen.normal(0.1), c = gen.normal();
    auto f = [&](long n) { return -alpha * std::log(static_cast<double>(n)) + c; };
    const long n0 = gen.integer(2, 300), n1 = n0 + gen.integer(1, 300);
    const long n = gen.integer(1, 100000);
    EXPECT_NEAR(project(n0, n1, f(n0), f(n1), n), f(n), 1e-9);
  }
}

TEST(ScalingExponent, Examples) {
  const ScalePair pair = constant_pair(100, 200, 0, 0);
  EXPECT_EQ(scaling_exponent(pair, 0.4, 0.4), 0.0);
  EXPECT_NEAR(scaling_exponent(pair, 0.6, 0.7), -0.1 / std::log(2.0), 1e-15);
  EXPECT_NEAR(scaling_exponent(pair, 0.6, 0.7), -0.14427, 1e-5);
}

TEST(ScalingExponent, RecoversPlantedSyntheticAlpha) {
  Gen gen(74);
  for (int trial = 0; trial < 50; ++trial) {
    SyntheticLogLinear s{{gen.uniform(-0.1, 0), gen.uniform(-0.1, 0), gen.uniform(-0.1, 0)},
                         {gen.uniform(), gen.uniform(), gen.uniform()},
                         gen.uniform(0, 0.3)};
    const auto p = gen.ratio(3);
    const ScalePair pair = constant_pair(200, 300, 0, 0);
    double alpha = 0;
    for (std::size_t i = 0; i < 3; ++i) alpha += s.alpha_coeffs[i] * p[i];
    EXPECT_NEAR(scaling_exponent(pair, s.raw(p.values(), 200), s.raw(p.values(), 300)), alpha, 1e-9);
  }
}

TEST(DefaultScales, SmallestPilotAndTwoThirds) {
  EXPECT_EQ(default_scales(std::vector<std::size_t>{500, 300, 400}).n1, 300);
  EXPECT_EQ(default_scales(std::vector<std::size_t>{500, 300, 400}).n0, 200);
  // 2/3 * 3 = 2 exactly; 2/3 * 9 = 6; 2/3 * 100 = 66.67 -> 67.
  EXPECT_EQ(default_scales(std::vector<std::size_t>{9}).n0, 6);
  EXPECT_EQ(default_scales(std::vector<std::size_t>{100}).n0, 67);
  EXPECT_THROW(default_scales(std::vector<std::size_t>{}), SizeError);
  EXPECT_THROW(default_scales(std::vector<std::size_t>{1}), DegeneracyError);
}

TEST(ProjectQuery, ConstantModelsIgnoreRatio) {
  Gen gen(75);
  const ScalePair pair = constant_pair(100, 300, 0.5, 0.6);
  const double expect = project(100, 300, 0.5, 0.6, 3000);
  for (int trial = 0; trial < 20; ++trial)
    EXPECT_NEAR(project_query(pair, gen.ratio(3), 3000, gen.uniform(0, 9), gen.uniform(0, 9)),
                expect, 1e-14);
}

TEST(ProjectQuery, ExactOnSyntheticOracle) {
  Gen gen(76);
  for (int trial = 0; trial < 50; ++trial) {
    SyntheticLogLinear s{{gen.uniform(-0.08, -0.01), gen.uniform(-0.08, -0.01), gen.uniform(-0.08, -0.01)},
                         {gen.uniform(0, 0.4), gen.uniform(0, 0.4), gen.uniform(0, 0.4)},
                         gen.uniform(0, 0.2)};
    const ScalePair pair{200, 300, pq_matching(s, 200), pq_matching(s, 300), CostSpec{}};
    const MixingRatio p = gen.ratio(3);
    for (long mult : {2L, 5L, 10L}) {
      const long n = mult * 300;
      EXPECT_NEAR(project_query(pair, p, n, gen.uniform(0, 5), gen.uniform(0, 5)),
                  s.raw(p.values(), static_cast<double>(n)), 1e-9);
    }
  }
}

TEST(ProjectionCsv, RoundTrip) {
  const auto path = (std::filesystem::temp_directory_path() / "projektor_projection_test.csv").string();
  std::vector<ProjectionRow> rows{{MixingRatio({0.25, 0.75}), 600, 0.8125, 0.79},
                                  {MixingRatio({1.0, 0.0}), 3000, 1.0 / 3.0, std::nullopt}};
  write_projection_csv(path, rows);
  const auto back = read_projection_csv(path);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].ratio, rows[0].ratio);
  EXPECT_EQ(back[0].target_n, 600);
  EXPECT_EQ(back[0].predicted, 0.8125);
  EXPECT_EQ(back[0].actual, 0.79);
  EXPECT_EQ(back[1].predicted, 1.0 / 3.0);
  EXPECT_FALSE(back[1].actual);
  std::remove(path.c_str());
  EXPECT_THROW(read_projection_csv("/nonexistent/x.csv"), ParseError);
}
