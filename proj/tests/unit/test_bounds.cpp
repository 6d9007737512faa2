#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "support.hpp"

using namespace rerm;

namespace {

ConvergenceErrors rho(double r0, double r1) {
  ConvergenceErrors e;
  e.rho0 = r0;
  e.rho1 = r1;
  return e;
}

double term(const BoundReport& r, const std::string& group) {
  double s = 0;
  for (const auto& t : r.terms)
    if (t.group == group) s += t.value;
  return s;
}

void expect_consistent(const BoundReport& r) {
  double sum = 0;
  for (const auto& t : r.terms) {
    EXPECT_GE(t.value, 0.0) << t.name;
    sum += t.value;
  }
  EXPECT_NEAR(r.total_excess, sum, 1e-12 * (1 + sum));
  EXPECT_NEAR(r.total_excess, r.stability_term + r.optimization_term + r.concentration_term, 1e-12 * (1 + sum));
}

Objective<LinearModel> logistic(std::size_t n, double lambda, std::uint64_t seed) {
  return Objective<LinearModel>(generate_logistic_classification(n, 4, 2.0, seed), LinearModel(4),
                                LossSpec::logistic(), lambda);
}

}  // namespace

TEST(KernelStability, DirectSubstitution) {
  const auto b = kernel_stability(1, 1, 0.5, 1);
  EXPECT_EQ(b.beta0, 1.0);
  EXPECT_EQ(b.beta1, 1.0);
}

TEST(KernelStability, ScalesAsInverseNAndLambda) {
  const auto a = kernel_stability(1.3, 0.7, 0.2, 100), b = kernel_stability(1.3, 0.7, 0.2, 200);
  EXPECT_EQ(b.beta0, a.beta0 / 2);
  EXPECT_EQ(b.beta1, a.beta1 / 2);
  const auto c = kernel_stability(1.3, 0.7, 0.4, 100);
  EXPECT_EQ(c.beta0, a.beta0 / 2);
  EXPECT_EQ(c.beta1, a.beta1 / 2);
}

TEST(KernelStability, NonPositiveInputThrows) {
  EXPECT_THROW(kernel_stability(0, 1, 1, 1), ArgumentError);
  EXPECT_THROW(kernel_stability(1, 1, 0, 1), ArgumentError);
  EXPECT_THROW(kernel_stability(1, 1, 1, -3), ArgumentError);
}

TEST(ExpectedBound, CollapsesToZero) {
  const auto r = expected_bound({0, 0}, rho(0, 0), 1, 1, 100);
  EXPECT_EQ(r.total_excess, 0.0);
  EXPECT_EQ(r.app_offset, "E_app");
}

TEST(ExpectedBound, TermIsolation) {
  const auto r = expected_bound({0.03, 0.2}, rho(0.125, 0), 1, 2, 100);
  EXPECT_DOUBLE_EQ(r.total_excess, 2 * 0.03 + 0.125);
  expect_consistent(r);
}

TEST(ExpectedBound, MatchesFormula) {
  const double b0 = 0.01, b1 = 0.02, r0 = 0.3, r1 = 0.04, L = 1.5, g = 2, n = 50;
  const auto r = expected_bound({b0, b1}, rho(r0, r1), L, g, n);
  EXPECT_NEAR(r.total_excess, 2 * b0 + r0 + g / 2 * r1 + std::sqrt(r1 * (L * L / (2 * n) + 6 * L * g * b1)), 1e-15);
}

TEST(ExpectedBound, MonotoneInEveryInput) {
  Rng rng(1);
  for (int k = 0; k < 200; ++k) {
    std::vector<double> v = {rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform(0.1, 3),
                             rng.uniform(0.1, 3)};
    auto eval = [](const std::vector<double>& x, double n) {
      return expected_bound({x[0], x[1]}, rho(x[2], x[3]), x[4], x[5], n).total_excess;
    };
    const double base = eval(v, 100);
    for (std::size_t i = 0; i < v.size(); ++i) {
      auto up = v;
      up[i] *= 1.5;
      EXPECT_GE(eval(up, 100), base);
    }
    EXPECT_LE(eval(v, 200), base);  // only the concentration term depends on n
  }
}

TEST(ExpectedBound, RejectsNegativeInputs) {
  EXPECT_THROW(expected_bound({-1, 0}, rho(0, 0), 1, 1, 10), ArgumentError);
  EXPECT_THROW(expected_bound({0, 0}, rho(0, 0), 1, 1, 0), ArgumentError);
}

TEST(HighProbBound, TermIsolation) {
  const double b0 = 0.01, M = 2, n = 100, delta = 0.05;
  const auto r = high_prob_bound({b0, 0.3}, rho(0, 0), 1, 1, M, n, delta);
  EXPECT_NEAR(r.total_excess, 2 * b0 + (4 * n * b0 + 2 * M) * std::sqrt(std::log(4 / delta) / (2 * n)), 1e-14);
  expect_consistent(r);
}

TEST(HighProbBound, DeltaOnlyMovesConcentration) {
  const StabilityConstants b{0.02, 0.03};
  const auto a = high_prob_bound(b, rho(0.1, 0.2), 1, 2, 3, 100, 0.1);
  const auto c = high_prob_bound(b, rho(0.1, 0.2), 1, 2, 3, 100, 0.01);
  EXPECT_EQ(term(a, "stability"), term(c, "stability"));
  EXPECT_EQ(term(a, "optimization"), term(c, "optimization"));
  EXPECT_NEAR(c.concentration_term / a.concentration_term, std::sqrt(std::log(400.0) / std::log(40.0)), 1e-12);
}

TEST(HighProbBound, VanishesAtSqrtLogOverNRate) {
  const double delta = 0.1;
  double prev = 0;
  for (double n : {1e2, 1e4, 1e6, 1e8}) {
    const auto b = kernel_stability(1, 1, 1, n);
    const auto r = high_prob_bound(b, rho(0, 0), 1, 1, 1, n, delta);
    const double scaled = r.total_excess / std::sqrt(std::log(1 / delta) / n);
    if (prev > 0) {
      EXPECT_NEAR(scaled / prev, 1.0, 0.1);
    }
    prev = scaled;
  }
}

TEST(HighProbBound, ArgumentChecks) {
  EXPECT_THROW(high_prob_bound({0, 0}, rho(0, 0), 1, 1, 1, 10, 0.0), ArgumentError);
  EXPECT_THROW(high_prob_bound({0, 0}, rho(0, 0), 1, 1, 1, 10, 1.0), ArgumentError);
  EXPECT_THROW(high_prob_bound({0, 0}, rho(0, 0), 1, 1, 0, 10, 0.1), ArgumentError);
}

TEST(HighProbBound, MonotoneInEveryInput) {
  Rng rng(2);
  for (int k = 0; k < 200; ++k) {
    std::vector<double> v = {rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform(0.1, 3),
                             rng.uniform(0.1, 3), rng.uniform(0.1, 3)};
    auto eval = [](const std::vector<double>& x) {
      return high_prob_bound({x[0], x[1]}, rho(x[2], x[3]), x[4], x[5], x[6], 100, 0.1).total_excess;
    };
    const double base = eval(v);
    for (std::size_t i = 0; i < v.size(); ++i) {
      auto up = v;
      up[i] *= 1.5;
      EXPECT_GE(eval(up), base);
    }
  }
}

TEST(NonconvexBound, PreconditionRequired) {
  EXPECT_THROW(nonconvex_bound(0.1, 1, 0.5, 0.01, 0, false), PreconditionError);
  EXPECT_TRUE(t1_reached(0.01, 1.0, 0.1));
  EXPECT_FALSE(t1_reached(0.011, 1.0, 0.1));
}

TEST(NonconvexBound, Values) {
  const auto r = nonconvex_bound(0.05, 1, 0.5, 0, 0, true);
  EXPECT_EQ(r.total_excess, 0.1);
  const auto a = nonconvex_bound(0.05, 2, 0.5, 0.01, 0.3, true), b = nonconvex_bound(0.05, 2, 0.5, 0.04, 0.3, true);
  EXPECT_NEAR((b.total_excess - 0.1 - 0.3) / (a.total_excess - 0.1 - 0.3), 2.0, 1e-12);
  expect_consistent(a);
  EXPECT_EQ(to_json(a)["notes"].count("assumptions"), 1u);
}

TEST(Report, JsonCarriesBreakdown) {
  const auto r = high_prob_bound({0.01, 0.02}, rho(0.1, 0.2), 1, 2, 3, 100, 0.1);
  const auto j = to_json(r);
  EXPECT_EQ(j["bound_kind"], "high_prob");
  EXPECT_EQ(j["terms"].size(), r.terms.size());
  EXPECT_EQ(j["inputs"]["delta"], 0.1);
  EXPECT_DOUBLE_EQ(j["total_excess"].get<double>(), r.total_excess);
  EXPECT_EQ(j["app_offset"], "E_app");
}

TEST(ConvergenceErrorsTest, ZeroAtReference) {
  const auto data = rerm_test::toy_regression(100, 4, 3);
  const Objective<LinearModel> obj(data, LinearModel(4), LossSpec::squared(), 0.1);
  const auto ref = ridge_closed_form(obj);
  const auto t = run_gd(obj, ref, 0.1, 0);
  const auto e = convergence_errors(obj, t, ref);
  EXPECT_EQ(e.rho0, 0.0);
  EXPECT_EQ(e.rho0_reg, 0.0);
  EXPECT_EQ(e.rho1, 0.0);
  EXPECT_LT(e.rho2, 1e-16);
}

TEST(ConvergenceErrorsTest, DistanceMatchesDirectNorm) {
  const auto data = rerm_test::toy_regression(100, 4, 4);
  const Objective<LinearModel> obj(data, LinearModel(4), LossSpec::squared(), 0.1);
  const auto ref = ridge_closed_form(obj);
  EvalOptions eval;
  eval.reference = ref;
  const auto t = run_gd(obj, Eigen::VectorXd::Zero(4), 0.05, 5, eval);
  const auto e = convergence_errors(obj, t, ref);
  EXPECT_NEAR(e.rho1, (t.final_w - ref).squaredNorm(), 1e-15);
  EXPECT_NEAR(e.rho0_raw, obj.empirical_risk(t.final_w) - obj.empirical_risk(ref), 1e-15);
  EXPECT_NEAR(e.rho2, obj.full_gradient(t.final_w).squaredNorm(), 1e-15);
  EXPECT_EQ(e.rho1_series.size(), t.records.size());
  EXPECT_EQ(e.rho1_series.back(), t.last().dist_sq_to_reference);
}

TEST(ConvergenceErrorsTest, LogisticGradientAtOrigin) {
  // Balanced labels, lambda = 0: grad R_S(0) = mean(-y_i x_i) / 2.
  const auto data = generate_logistic_classification(60, 4, 2.0, 5);
  const Objective<LinearModel> obj(data, LinearModel(4), LossSpec::logistic(), 0.0);
  Eigen::VectorXd expect = Eigen::VectorXd::Zero(4);
  for (std::size_t i = 0; i < 60; ++i) expect -= data.label(i) * data.row(i).transpose() / 2.0;
  expect /= 60.0;
  const auto t = run_gd(obj, Eigen::VectorXd::Zero(4), 0.1, 0);
  EXPECT_NEAR(t.records[0].grad_norm_sq, expect.squaredNorm(), 1e-15);
}

TEST(ConvergenceErrorsTest, RejectsFakeReference) {
  const auto data = rerm_test::toy_regression(100, 4, 6);
  const Objective<LinearModel> obj(data, LinearModel(4), LossSpec::squared(), 0.1);
  const auto ref = ridge_closed_form(obj);
  const auto t = run_gd(obj, ref, 0.1, 0);
  const Eigen::VectorXd fake = Eigen::VectorXd::Zero(4);
  EXPECT_THROW(convergence_errors(obj, t, fake), ReferenceError);
  EXPECT_THROW(convergence_errors(obj, t, fake, ReferenceCheck{1e6, 1e-9}), ReferenceError);
}

TEST(EmpiricalStability, HugeLambdaPinsSolution) {
  const auto base = logistic(40, 1e6, 7);
  const auto pool = generate_logistic_classification(50, 4, 2.0, 8);
  const auto m = empirical_stability([&](const Dataset& s) { return base.with_data(s); }, base.data(), pool, 20, 9,
                                     1e-14);
  EXPECT_LT(m.max_loss_change, 1e-7);
  EXPECT_LT(m.max_output_change, 1e-7);
  EXPECT_LT(m.max_replace_output_change, 1e-7);
}

TEST(EmpiricalStability, ContainedAndHalvedByDuplication) {
  const auto base = logistic(60, 0.1, 10);
  const auto pool = generate_logistic_classification(200, 4, 2.0, 11);
  auto build = [&](const Dataset& s) { return base.with_data(s); };
  const auto m1 = empirical_stability(build, base.data(), pool, 60, 12, 1e-12);
  const auto doubled = concatenate(base.data(), base.data());
  const auto m2 = empirical_stability(build, doubled, pool, 60, 12, 1e-12);
  const auto b1 = kernel_stability(1, m1.K, 0.1, 60);
  EXPECT_LE(m1.max_loss_change, b1.beta0);
  EXPECT_LE(m1.max_output_change, b1.beta1);
  EXPECT_LE(m1.max_replace_loss_change, 2 * b1.beta0);
  const double r_loss = m2.max_loss_change / m1.max_loss_change;
  const double r_out = m2.max_output_change / m1.max_output_change;
  EXPECT_GT(r_loss, 0.3);
  EXPECT_LT(r_loss, 0.7);
  EXPECT_GT(r_out, 0.3);
  EXPECT_LT(r_out, 0.7);
}

TEST(SufficientTraining, UnitCase) {
  const auto r = sufficient_training(Algorithm::gd, Regime::convex, 1.0, std::numbers::e, 5, std::nullopt, 1.0);
  EXPECT_NEAR(r.iterations, 1.0, 1e-15);
  EXPECT_EQ(r.label, kOrderEstimateLabel);
}

TEST(SufficientTraining, LinearInConstantFactor) {
  for (auto a : {Algorithm::gd, Algorithm::sgd, Algorithm::svrg})
    for (auto regime : {Regime::convex, Regime::nonconvex}) {
      const auto one = sufficient_training(a, regime, 7, 1000, 20, 0.1, 1.0);
      const auto three = sufficient_training(a, regime, 7, 1000, 20, 0.1, 3.0);
      EXPECT_NEAR(three.iterations, 3 * one.iterations, 1e-9 * three.iterations);
      EXPECT_NEAR(three.time_units, 3 * one.time_units, 1e-9 * three.time_units);
    }
}

TEST(SufficientTraining, ArgumentChecks) {
  EXPECT_THROW(sufficient_training(Algorithm::gd, Regime::nonconvex, 1, 100, 5, std::nullopt), ArgumentError);
  EXPECT_THROW(sufficient_training(Algorithm::gd, Regime::convex, 1, 100, 5, std::nullopt, 0.0), ArgumentError);
  EXPECT_THROW(sufficient_training(Algorithm::gd, Regime::convex, 0, 100, 5, std::nullopt), ArgumentError);
}

TEST(CorollaryOrders, Shapes) {
  const double est = std::sqrt(std::log(10.0) / 1e4);
  const double t1 = corollary_orders(Algorithm::sgd, 2, 1e4, 1000, 0.1) - est;
  const double t2 = corollary_orders(Algorithm::sgd, 2, 1e4, 2000, 0.1) - est;
  const double loglog = std::log(std::log(2000.0) / 0.1) / std::log(std::log(1000.0) / 0.1);
  EXPECT_NEAR(t2 / t1, 0.5 * loglog, 1e-9);
  const double g1 = corollary_orders(Algorithm::gd, 0.1, 1e4, 10, 0.1) - est;
  const double g2 = corollary_orders(Algorithm::gd, 0.1, 1e4, 20, 0.1) - est;
  const double g3 = corollary_orders(Algorithm::gd, 0.1, 1e4, 30, 0.1) - est;
  EXPECT_NEAR(g2 / g1, g3 / g2, 1e-9);
  EXPECT_LT(g2 / g1, 1.0);
  EXPECT_THROW(corollary_orders(Algorithm::svrg, 1, 10, 10, 0.1), ArgumentError);
  EXPECT_THROW(corollary_orders(Algorithm::sgd, 1, 10, 1, 0.1), ArgumentError);
}

TEST(CorollaryOrders, LargeTTracksEstimationRate) {
  for (double n : {1e2, 1e4, 1e6}) {
    const double v = corollary_orders(Algorithm::sgd, 1, n, 1e15, 0.1);
    EXPECT_NEAR(v / std::sqrt(std::log(10.0) / n), 1.0, 1e-3);
  }
}
