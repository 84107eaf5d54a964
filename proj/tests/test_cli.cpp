#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cli.hpp"
#include "projektor/dataspace.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = projektor::run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

json source(const std::string& id, std::vector<double> shift = {0.0, 0.0}) {
  return {{"id", id},
          {"pilot_size", 60},
          {"gaussian", {{"size", 300}, {"classes", {0, 1, 2}}, {"shift", shift}}}};
}

// Small enough that every subcommand finishes in a few seconds.
json tiny_config(double c_a = 0.3, double c_b = 0.4, double c_c = 0.35) {
  return {{"seed", 9},
          {"dim", 2},
          {"num_classes", 3},
          {"sources", {source("a"), source("b", {1.0, 0.0}), source("c", {0.0, 1.0})}},
          {"val", {{"id", "val"}, {"gaussian", {{"size", 40}, {"classes", {0, 1, 2}}}}}},
          {"cost", {{"label_weight", 1.0}}},
          {"learner",
           {{"kind", "synthetic_log_linear"},
            {"alpha", {-0.05, -0.04, -0.06}},
            {"c", {c_a, c_b, c_c}},
            {"quad_weight", 0.05}}},
          {"n0", 30},
          {"n1", 50},
          {"grid_resolution", 0.25},
          {"predictors", {"pq", "cs", "linear"}},
          {"seeds", {4}},
          {"projection", {{"targets", {100, 200}}}},
          {"selection", {{"budget", 150}, {"max_iters", 15}}},
          {"budget_search", {{"target", 1.01}, {"grid", {60, 120}}}}};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("projektor_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string write_config(const json& j, const std::string& name = "config.json") {
    const auto p = dir_ / name;
    std::ofstream(p) << j.dump(2);
    return p.string();
  }
  std::string out(const std::string& sub) {
    fs::create_directories(dir_ / sub);
    return (dir_ / sub).string();
  }

  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, UsageErrorsExitWithOne) {
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"frobnicate"}).code, 1);
  EXPECT_EQ(run({"fit"}).code, 1);  // --config missing
  EXPECT_EQ(run({"--config", (dir_ / "absent.json").string(), "fit"}).code, 1);
  const auto cfg = write_config(tiny_config());
  EXPECT_EQ(run({"--config", cfg, "predict"}).code, 1);  // --ratio missing
  EXPECT_EQ(run({"--config", cfg, "--out", out("o"), "predict", "--ratio", "x,y,z"}).code, 1);
  EXPECT_EQ(run({"--help"}).code, 0);
}

TEST_F(CliTest, ConfigErrorsExitWithOne) {
  json j = tiny_config();
  j["mystery"] = 1;
  const Outcome r = run({"--config", write_config(j), "--out", out("o"), "fit"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("mystery"), std::string::npos);
}

TEST_F(CliTest, NumericFailureExitsWithTwo) {
  const auto cfg = write_config(tiny_config());
  const auto o = out("o");
  ASSERT_EQ(run({"--config", cfg, "--out", o, "fit"}).code, 0);
  EXPECT_EQ(run({"--config", cfg, "--out", o, "budget"}).code, 2);
  const json b = json::parse(slurp(fs::path(o) / "budget.json"));
  EXPECT_FALSE(b.at("reachable").get<bool>());
  EXPECT_EQ(b.at("best_budget").get<long>(), 120);
  // A ratio of the wrong length fails inside the numeric layer.
  EXPECT_EQ(run({"--config", cfg, "--out", o, "predict", "--ratio", "0.5,0.5"}).code, 2);
}

TEST_F(CliTest, FitWritesModelsAndTuples) {
  const auto cfg = write_config(tiny_config());
  const auto o = out("o");
  const Outcome r = run({"--config", cfg, "--out", o, "fit"});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"fit_dataset.csv", "pair_pq.json", "pair_cs.json", "pair_linear.json"})
    EXPECT_TRUE(fs::exists(fs::path(o) / f)) << f;
  const json pair = json::parse(slurp(fs::path(o) / "pair_pq.json"));
  EXPECT_EQ(pair.at("n0").get<long>(), 30);
  EXPECT_EQ(pair.at("n1").get<long>(), 50);
}

TEST_F(CliTest, FitIsByteDeterministic) {
  const auto cfg = write_config(tiny_config());
  const auto a = out("a"), b = out("b");
  ASSERT_EQ(run({"--config", cfg, "--out", a, "fit"}).code, 0);
  ASSERT_EQ(run({"--config", cfg, "--out", b, "fit"}).code, 0);
  for (const char* f : {"fit_dataset.csv", "pair_pq.json", "pair_cs.json"})
    EXPECT_EQ(slurp(fs::path(a) / f), slurp(fs::path(b) / f)) << f;
  const auto c = out("c");
  ASSERT_EQ(run({"--config", cfg, "--seed", "5", "--out", c, "fit"}).code, 0);
  EXPECT_NE(slurp(fs::path(a) / "fit_dataset.csv"), slurp(fs::path(c) / "fit_dataset.csv"));
}

TEST_F(CliTest, PredictAndProjectReadFittedModels) {
  const auto cfg = write_config(tiny_config());
  const auto o = out("o");
  ASSERT_EQ(run({"--config", cfg, "--out", o, "fit"}).code, 0);
  const Outcome p = run({"--config", cfg, "--out", o, "predict", "--kind", "pq", "--ratio", "0.2,0.3,0.5"});
  ASSERT_EQ(p.code, 0) << p.err;
  const json j = json::parse(p.out);
  EXPECT_EQ(j.at("budget").get<long>(), 50);
  EXPECT_GE(j.at("ot_distance").get<double>(), 0.0);

  ASSERT_EQ(run({"--config", cfg, "--out", o, "project", "--kind", "pq"}).code, 0);
  std::ifstream csv(fs::path(o) / "projection.csv");
  std::string header, line;
  std::getline(csv, header);
  std::size_t rows = 0;
  while (std::getline(csv, line)) rows += !line.empty();
  EXPECT_EQ(rows, 2u * 15u);  // two targets times the 15 lattice ratios
}

TEST_F(CliTest, ConstantObjectiveSelectsTheUniformStart) {
  json j = tiny_config();
  j["learner"]["alpha"] = {0.0, 0.0, 0.0};
  j["learner"]["c"] = {0.6, 0.6, 0.6};
  j["learner"]["quad_weight"] = 0.0;
  const auto cfg = write_config(j);
  const auto o = out("o");
  ASSERT_EQ(run({"--config", cfg, "--out", o, "fit"}).code, 0);
  const Outcome r = run({"--config", cfg, "--out", o, "select", "--kind", "pq"});
  ASSERT_EQ(r.code, 0) << r.err;
  const json sel = json::parse(slurp(fs::path(o) / "selection.json"));
  const auto p = sel.at("ratio").get<std::vector<double>>();
  ASSERT_EQ(p.size(), 3u);
  for (double x : p) EXPECT_NEAR(x, 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(sel.at("predicted_performance").get<double>(), 0.6, 1e-9);
  EXPECT_EQ(sel.at("budget").get<long>(), 150);
}

TEST_F(CliTest, SelectWritesTrajectoryOnTheSimplex) {
  const auto cfg = write_config(tiny_config());
  const auto o = out("o");
  ASSERT_EQ(run({"--config", cfg, "--out", o, "fit"}).code, 0);
  ASSERT_EQ(run({"--config", cfg, "--out", o, "select"}).code, 0);
  std::ifstream csv(fs::path(o) / "trajectory.csv");
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "iter,p_0,p_1,p_2,objective");
  while (std::getline(csv, line)) {
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> v;
    while (std::getline(ss, cell, ',')) v.push_back(std::stod(cell));
    ASSERT_EQ(v.size(), 5u);
    EXPECT_NEAR(v[1] + v[2] + v[3], 1.0, 1e-9);
    for (int i = 1; i <= 3; ++i) EXPECT_GE(v[static_cast<std::size_t>(i)], 0.0);
  }
}

TEST_F(CliTest, EvalOfAnExactlyRepresentableLearnerIsNearZeroForPq) {
  // The synthetic learner is quadratic in p and linear in log N, which the
  // PQ form represents exactly, so its test MAE vanishes.
  json j = tiny_config();
  j["grid_resolution"] = 0.2;
  const auto cfg = write_config(j);
  const auto o = out("o");
  const Outcome r = run({"--config", cfg, "--out", o, "eval"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream csv(fs::path(o) / "eval_summary.csv");
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "predictor,fitted_seeds,median_train_mae,median_test_mae");
  bool saw_pq = false;
  while (std::getline(csv, line)) {
    if (line.rfind("pq,", 0) != 0) continue;
    saw_pq = true;
    std::stringstream ss(line);
    std::string kind, seeds, train, test;
    std::getline(ss, kind, ',');
    std::getline(ss, seeds, ',');
    std::getline(ss, train, ',');
    std::getline(ss, test, ',');
    EXPECT_LT(std::stod(train), 1e-6);
    EXPECT_LT(std::stod(test), 1e-6);
  }
  EXPECT_TRUE(saw_pq);
}

TEST_F(CliTest, GenWritesReadableCsvs) {
  const auto cfg = write_config(tiny_config());
  const auto o = out("o");
  ASSERT_EQ(run({"--config", cfg, "--out", o, "gen"}).code, 0);
  const auto full = projektor::read_dataset_csv((fs::path(o) / "b_full.csv").string());
  const auto pilot = projektor::read_dataset_csv((fs::path(o) / "b_pilot.csv").string());
  EXPECT_EQ(full.size(), 300u);
  EXPECT_EQ(pilot.size(), 60u);
  EXPECT_EQ(projektor::read_dataset_csv((fs::path(o) / "val.csv").string()).size(), 40u);
}
