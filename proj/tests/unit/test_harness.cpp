#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "support.hpp"

using namespace rerm;
using nlohmann::json;

namespace {

json small_config(const std::string& out) {
  return json{{"name", "small"},
              {"task", "linreg"},
              {"data", {{"n", 200}, {"d", 5}, {"seed", 3}}},
              {"algorithms",
               {{{"name", "gd"}}, {{"name", "sgd"}}, {{"name", "svrg"}, {"inner", "2n"}}}},
              {"budget_passes", 20},
              {"seeds", {1, 2}},
              {"evals_per_pass", 2},
              {"bounds", {{"expected", true}, {"high_prob", true}}},
              {"output_dir", out}};
}

ExperimentConfig parse(const json& j) { return parse_config(j, RERM_SOURCE_DIR); }

std::vector<TraceRecord> fake_trace(std::vector<std::pair<double, double>> passes_and_gap) {
  std::vector<TraceRecord> out;
  for (auto [p, g] : passes_and_gap) {
    TraceRecord r;
    r.data_passes = p;
    r.reg_gap = g;
    out.push_back(r);
  }
  return out;
}

}  // namespace

TEST(Ridge, HugeLambdaShrinksToZero) {
  const auto d = rerm_test::toy_regression(50, 4, 1);
  EXPECT_LT(ridge_closed_form(d, 1e9).norm(), 1e-8);
}

TEST(Ridge, HandSolvableSystem) {
  RowMatrix x(2, 1);
  x << 1, 2;
  const Dataset d(x, Eigen::Vector2d(1, 2), Task::regression());
  EXPECT_NEAR(ridge_closed_form(d, 1e-12)[0], 1.0, 1e-9);
}

TEST(Ridge, GradientSelfCheck) {
  for (std::uint64_t s = 1; s <= 5; ++s) {
    const Objective<LinearModel> obj(rerm_test::toy_regression(300, 8, s), LinearModel(8, s % 2 == 0),
                                     LossSpec::squared(), 0.01 * static_cast<double>(s));
    EXPECT_LE(obj.full_gradient(ridge_closed_form(obj)).norm(), 1e-8);
  }
  EXPECT_THROW(ridge_closed_form(rerm_test::toy_regression(10, 2, 1), 0.0), ArgumentError);
}

TEST(Minimize, LogisticReachesGradientTolerance) {
  const Objective<LinearModel> obj(generate_logistic_classification(200, 5, 2.0, 1), LinearModel(5),
                                   LossSpec::logistic(), 0.05);
  const auto w = minimize(obj);
  EXPECT_LE(obj.full_gradient(w).norm(), 1e-10);
  EXPECT_THROW(minimize(obj, MinimizeOptions{1e-10, 3}), NumericError);
}

TEST(FiniteDiff, QuadraticAndConstant) {
  const Eigen::Vector3d w(0.3, -1.2, 4.0);
  const auto g = finite_diff_gradient([](const Eigen::VectorXd& v) { return v.squaredNorm(); }, w, 1e-5);
  EXPECT_LT((g - 2 * w).cwiseAbs().maxCoeff(), 1e-8);
  const auto z = finite_diff_gradient([](const Eigen::VectorXd&) { return 3.0; }, w, 1e-5);
  EXPECT_EQ(z, Eigen::VectorXd::Zero(3));
  EXPECT_THROW(finite_diff_gradient([](const Eigen::VectorXd&) { return 0.0; }, w, 0.0), ArgumentError);
}

TEST(FiniteDiff, MatchesLogisticFullGradient) {
  const Objective<LinearModel> obj(generate_logistic_classification(80, 6, 2.0, 2), LinearModel(6),
                                   LossSpec::logistic(), 0.1);
  Rng rng(3);
  for (int k = 0; k < 10; ++k) {
    Eigen::VectorXd w(6);
    for (auto& v : w) v = rng.normal();
    const auto num = finite_diff_gradient([&](const Eigen::VectorXd& v) { return obj.regularized_risk(v); }, w, 1e-5);
    EXPECT_LE(gradient_mismatch(obj.full_gradient(w), num), 1e-4);
  }
}

TEST(Diagnostics, GradientChecksPass) {
  for (const auto& c : check_gradients(5)) {
    EXPECT_TRUE(c.passed()) << c.family << " " << c.worst_mismatch;
    EXPECT_EQ(c.probes, 30u);
  }
}

TEST(Config, ShippedConfigsParse) {
  for (const char* f : {"configs/desk_regression.json", "configs/desk_logistic.json", "configs/desk_mlp.json",
                        "configs/full_regression.json"}) {
    EXPECT_NO_THROW(load_config(rerm_test::source_path(f))) << f;
  }
}

TEST(Config, ScalePatch) {
  const auto path = rerm_test::source_path("configs/desk_regression.json");
  const auto desk = load_config(path);
  const auto full = load_config(path, true);
  EXPECT_EQ(desk.data.n, 4000u);
  EXPECT_EQ(full.data.n, 40000u);
  ASSERT_EQ(full.algorithms.size(), 3u);
  EXPECT_EQ(*full.algorithms[0].step, 0.032);
  EXPECT_EQ(full.algorithms[1].schedule->describe(), "0.01/t");
  EXPECT_EQ(*full.algorithms[2].step, 0.005);
  EXPECT_THROW(parse_config(small_config("x"), ".", true), ArgumentError);
}

TEST(Config, Errors) {
  auto expect_error = [](json j, const std::string& fragment) {
    try {
      parse(j);
      ADD_FAILURE() << "accepted: " << j.dump();
    } catch (const ArgumentError& e) {
      EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
    }
  };
  auto j = small_config("x");
  j["typo"] = 1;
  expect_error(j, "typo");
  j = small_config("x");
  j.erase("task");
  expect_error(j, "task");
  j = small_config("x");
  j["algorithms"][1]["name"] = "gd";
  expect_error(j, "duplicate");
  j = small_config("x");
  j["iterations"] = 4;
  expect_error(j, "budget_passes");
  j = small_config("x");
  j["seeds"] = json::array();
  expect_error(j, "seeds");
  j = small_config("x");
  j["data"]["train_fraction"] = 1.5;
  expect_error(j, "data.train_fraction");
  j = small_config("x");
  j["algorithms"][2]["inner"] = "xn";
  expect_error(j, "inner");
  j = small_config("x");
  j["task"] = "mlp";
  j.erase("bounds");
  expect_error(j, "explicit step");
  j = small_config("x");
  j["algorithms"][0]["step"] = -1;
  expect_error(j, "algorithms[0].step");
  EXPECT_THROW(load_config("/nonexistent/config.json"), ArgumentError);
}

TEST(Config, InnerLoopRule) {
  EXPECT_EQ(detail::resolve_inner("2n", 100), 200u);
  EXPECT_EQ(detail::resolve_inner("n", 7), 7u);
  EXPECT_EQ(detail::resolve_inner("0.5n", 7), 4u);
  EXPECT_EQ(detail::resolve_inner("13", 7), 13u);
  EXPECT_THROW(detail::resolve_inner("0", 7), ArgumentError);
  EXPECT_THROW(detail::resolve_inner("abc", 7), ArgumentError);
}

TEST(Compare, IdenticalTracesGiveUnitRatios) {
  const auto t = fake_trace({{0, 1}, {1, 0.05}, {2, 0.001}, {3, 1e-5}});
  const auto rep = compare_report({{"a", {t}}, {"b", {t}}}, ThresholdSpec{"reg_gap", true, {0.1, 1e-2, 1e-4}});
  ASSERT_FALSE(rep.ratios.empty());
  for (const auto& r : rep.ratios) EXPECT_EQ(r.ratio, 1.0);
}

TEST(Compare, UnreachedIsReportedNotThrown) {
  const auto fast = fake_trace({{0, 1}, {1, 1e-3}, {2, 1e-9}});
  const auto slow = fake_trace({{0, 1}, {5, 0.2}, {9, 0.05}});
  const auto rep = compare_report({{"fast", {fast}}, {"slow", {slow}}}, ThresholdSpec{"reg_gap", true, {}});
  EXPECT_EQ(rep.rows.size(), 8u);
  EXPECT_EQ(*rep.passes("fast", 1e-1), 1.0);
  EXPECT_EQ(*rep.passes("slow", 1e-1), 9.0);
  EXPECT_FALSE(rep.passes("slow", 1e-2).has_value());
  EXPECT_EQ(rep.early_winner(), "fast");
  EXPECT_EQ(*rep.tightest_common, 1e-1);
  const auto j = to_json(rep);
  EXPECT_EQ(j["thresholds"][1]["passes"]["slow"], "not reached");
}

TEST(Compare, MedianCountsUnreachedSeedsAsInfinite) {
  const auto hit = fake_trace({{0, 1}, {2, 1e-3}});
  const auto miss = fake_trace({{0, 1}, {2, 0.5}});
  const auto rep = compare_report({{"a", {hit, hit, miss}}, {"b", {hit, miss, miss}}},
                                  ThresholdSpec{"reg_gap", true, {1e-2}});
  EXPECT_EQ(*rep.passes("a", 1e-2), 2.0);
  EXPECT_FALSE(rep.passes("b", 1e-2).has_value());
  EXPECT_THROW(compare_report({{"a", {hit}}}, ThresholdSpec{}), ArgumentError);
}

TEST(Compare, AbsoluteThresholdOnTrainRisk) {
  std::vector<TraceRecord> t(3);
  t[0].train_risk = 2.3;
  t[1].train_risk = 1.4;
  t[1].data_passes = 1;
  t[2].train_risk = 1.0;
  t[2].data_passes = 2;
  const ThresholdSpec spec{"train_risk", false, {1.5}};
  EXPECT_EQ(*passes_to_threshold(t, spec, 1.5), 1.0);
  EXPECT_FALSE(passes_to_threshold(t, spec, 0.9).has_value());
}

TEST(Experiment, ZeroIterationsSingleRun) {
  auto j = small_config(rerm_test::scratch_dir("zero").string());
  j.erase("budget_passes");
  j["iterations"] = 0;
  j["algorithms"] = json::array({{{"name", "gd"}}});
  j["seeds"] = {5};
  j.erase("bounds");
  const auto art = run_experiment(parse(j));
  ASSERT_EQ(art.runs.size(), 1u);
  EXPECT_EQ(art.runs[0].trace.records.size(), 1u);
  EXPECT_FALSE(art.compare.has_value());
  EXPECT_TRUE(art.complete);
}

TEST(Experiment, ArtifactsAreIndexedAndDeterministic) {
  const auto dir1 = rerm_test::scratch_dir("det1"), dir2 = rerm_test::scratch_dir("det2");
  const auto a = run_experiment(parse(small_config(dir1.string())));
  const auto b = run_experiment(parse(small_config(dir2.string())));
  ASSERT_TRUE(a.complete);
  EXPECT_EQ(a.runs.size(), 6u);
  const json summary = json::parse(rerm_test::slurp(dir1 / "summary.json"));
  EXPECT_TRUE(summary["complete"].get<bool>());
  for (const auto& f : summary["files"]) EXPECT_TRUE(std::filesystem::exists(dir1 / f.get<std::string>())) << f;
  EXPECT_EQ(a.bound_files.size(), 6u);
  for (const auto& r : a.runs) EXPECT_EQ(rerm_test::slurp(dir1 / r.csv_file), rerm_test::slurp(dir2 / r.csv_file));
  EXPECT_EQ(rerm_test::slurp(dir1 / "compare.csv"), rerm_test::slurp(dir2 / "compare.csv"));
  const json bound = json::parse(rerm_test::slurp(dir1 / "bounds/gd_expected.json"));
  EXPECT_EQ(bound["bound_kind"], "expected");
  EXPECT_GT(bound["total_excess"].get<double>(), 0.0);
}

TEST(Experiment, CompareTableReproducibleFromCsv) {
  const auto dir = rerm_test::scratch_dir("cmp");
  const auto art = run_experiment(parse(small_config(dir.string())));
  const auto rebuilt = compare_directory(dir);
  EXPECT_EQ(to_json(rebuilt), to_json(*art.compare));
  // Each cell can be recomputed by scanning the trace of a single seed run.
  auto j = small_config(rerm_test::scratch_dir("cmp1").string());
  j["seeds"] = {1};
  const auto one = run_experiment(parse(j));
  for (const auto& r : one.runs) {
    std::ifstream csv(std::filesystem::path(one.dir) / r.csv_file);
    const auto recs = read_trace_csv(csv);
    for (const auto& row : one.compare->rows)
      EXPECT_EQ(passes_to_threshold(recs, one.compare->spec, row.threshold), one.compare->passes(r.label, row.threshold));
  }
}

TEST(Experiment, BadDataPathMarksIncomplete) {
  const auto dir = rerm_test::scratch_dir("bad");
  auto j = small_config(dir.string());
  j["task"] = "logreg";
  j["data"] = {{"source", "libsvm"}, {"path", "no/such/file.svm"}};
  try {
    run_experiment(parse(j));
    FAIL() << "expected StageError";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "data");
  }
  const json summary = json::parse(rerm_test::slurp(dir / "summary.json"));
  EXPECT_FALSE(summary["complete"].get<bool>());
  EXPECT_EQ(summary["failed_stage"], "data");
  EXPECT_THROW(compare_directory(dir), DataError);
}

TEST(Experiment, DivergenceNamesOptimizeStage) {
  auto j = small_config(rerm_test::scratch_dir("div").string());
  j["algorithms"] = json::array({{{"name", "gd"}, {"step", 50.0}}});
  try {
    run_experiment(parse(j));
    FAIL() << "expected StageError";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "optimize[gd seed 1]");
    EXPECT_NE(std::string(e.what()).find("constant(50)"), std::string::npos);
  }
}

TEST(Experiment, MlpRecordsNonconvexBoundOrNote) {
  const auto dir = rerm_test::scratch_dir("mlp");
  const json j = {{"task", "mlp"},
                  {"data", {{"n", 120}, {"d", 4}, {"classes", 3}, {"separation", 3.0}}},
                  {"hidden", 5},
                  {"algorithms", {{{"name", "gd"}, {"step", 0.5}}, {{"name", "sgd"}, {"schedule", {{"kind", "inverse_sqrt"}, {"c", 0.2}}}}}},
                  {"budget_passes", 5},
                  {"seeds", {1}},
                  {"thresholds", {{"mode", "absolute"}, {"values", {1.0, 0.5}}}},
                  {"bounds", {{"nonconvex", {{"beta0", 0.01}, {"L", 1}, {"mu", 0.1}, {"gamma", 1}, {"epsilon0", 10}, {"local_gap", 0}}}}},
                  {"output_dir", dir.string()}};
  const auto art = run_experiment(parse(j));
  EXPECT_EQ(art.compare->spec.metric, "train_risk");
  EXPECT_EQ(art.bound_files.size(), 2u);
  auto tight = j;
  tight["bounds"]["nonconvex"]["epsilon0"] = 1e-9;
  tight["output_dir"] = rerm_test::scratch_dir("mlp2").string();
  const auto art2 = run_experiment(parse(tight));
  EXPECT_TRUE(art2.bound_files.empty());
  const json summary = json::parse(rerm_test::slurp(std::filesystem::path(art2.dir) / "summary.json"));
  EXPECT_EQ(summary["bound_notes"][0]["status"], "precondition not met");
}
