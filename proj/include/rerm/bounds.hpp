#pragma once

// Stability constants, convergence errors, the three generalization bounds,
// sufficient-training estimates and an empirical replace-one stability audit.
//
// Every bound total is a bound on E - E_app: the approximation error is not
// computable and is carried as a symbolic offset. Norms are taken in
// parameter space, which coincides with the hypothesis-space norm for the
// linear kernel.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "rerm/data.hpp"
#include "rerm/error.hpp"
#include "rerm/model.hpp"
#include "rerm/objective.hpp"
#include "rerm/optim.hpp"
#include "rerm/oracles.hpp"
#include "rerm/rng.hpp"

namespace rerm {

struct StabilityConstants {
  double beta0 = 0.0;  // uniform loss stability
  double beta1 = 0.0;  // output stability
};

/// Closed-form stability of kernel-regularized R-ERM with an L-Lipschitz
/// convex loss: beta0 = L^2 K^2 / (2 lambda n), beta1 = L K / (2 lambda n).
inline StabilityConstants kernel_stability(double L, double K, double lambda, double n) {
  if (!(L > 0.0 && K > 0.0 && lambda > 0.0 && n > 0.0))
    throw ArgumentError("kernel_stability: L, K, lambda and n must all be positive");
  const double denom = 2.0 * lambda * n;
  return {L * L * K * K / denom, L * K / denom};
}

/// Convergence errors at the end of a trace plus their per-evaluation series.
///
/// rho0 is the training-risk gap R_S(w_T) - R_S(w*) (clamped at 0, the raw
/// value is kept in rho0_raw); rho0_reg is the regularized gap
/// R_S^r(w_T) - R_S^r(w*), which is what linear-rate statements contract.
/// rho1 = ||w_T - w*||^2 and rho2 = ||grad R_S^r(w_T)||^2.
struct ConvergenceErrors {
  double rho0 = 0.0;
  double rho0_raw = 0.0;
  double rho0_reg = 0.0;
  double rho1 = 0.0;
  double rho2 = 0.0;
  std::vector<double> data_passes, rho0_series, rho0_reg_series, rho1_series, rho2_series;
};

struct ReferenceCheck {
  double gradient_tolerance = 1e-8;
  double negative_gap_tolerance = 1e-9;
};

template <TrainableObjective Obj>
ConvergenceErrors convergence_errors(const Obj& obj, const Trace& trace, const ParameterVector& reference,
                                     const ReferenceCheck& check = {}) {
  if (trace.records.empty()) throw ArgumentError("convergence_errors: empty trace");
  if (reference.size() != trace.final_w.size())
    throw ArgumentError("convergence_errors: reference has the wrong length");
  const double ref_grad = obj.full_gradient(reference).norm();
  if (!(ref_grad <= check.gradient_tolerance))
    throw ReferenceError(fmt::format("convergence_errors: reference gradient norm {} exceeds {}",
                                     ref_grad, check.gradient_tolerance));
  const double ref_train = obj.empirical_risk(reference);

  ConvergenceErrors e;
  const double gap = obj.regularized_gap(trace.final_w, reference);
  if (gap < -check.negative_gap_tolerance)
    throw ReferenceError(fmt::format("convergence_errors: iterate beats the reference by {}; the "
                                     "reference is not a minimizer", -gap));
  e.rho0_reg = std::max(gap, 0.0);
  e.rho0_raw = obj.empirical_risk(trace.final_w) - ref_train;
  e.rho0 = std::max(e.rho0_raw, 0.0);
  e.rho1 = (trace.final_w - reference).squaredNorm();
  e.rho2 = obj.full_gradient(trace.final_w).squaredNorm();
  for (const auto& r : trace.records) {
    e.data_passes.push_back(r.data_passes);
    e.rho0_series.push_back(r.train_risk - ref_train);
    e.rho0_reg_series.push_back(r.reg_gap);
    e.rho1_series.push_back(r.dist_sq_to_reference);
    e.rho2_series.push_back(r.grad_norm_sq);
  }
  return e;
}

// ---------------------------------------------------------------------------
// Bound reports

enum class BoundKind { expected, high_prob, nonconvex };

inline std::string to_string(BoundKind kind) {
  switch (kind) {
    case BoundKind::expected: return "expected";
    case BoundKind::high_prob: return "high_prob";
    case BoundKind::nonconvex: return "nonconvex";
  }
  return "unknown";
}

struct BoundTerm {
  std::string name;
  std::string group;  // stability | optimization | concentration
  double value = 0.0;
};

struct BoundReport {
  BoundKind kind = BoundKind::expected;
  std::map<std::string, double> inputs;
  std::map<std::string, std::string> notes;
  std::vector<BoundTerm> terms;
  double stability_term = 0.0;
  double optimization_term = 0.0;
  double concentration_term = 0.0;
  std::string app_offset = "E_app";
  double total_excess = 0.0;

  void add(std::string name, std::string group, double value) {
    if (group == "stability") {
      stability_term += value;
    } else if (group == "optimization") {
      optimization_term += value;
    } else {
      concentration_term += value;
    }
    terms.push_back({std::move(name), std::move(group), value});
    total_excess = stability_term + optimization_term + concentration_term;
  }
};

inline nlohmann::json to_json(const BoundReport& r) {
  nlohmann::json j;
  j["bound_kind"] = to_string(r.kind);
  j["inputs"] = r.inputs;
  j["notes"] = r.notes;
  j["app_offset"] = r.app_offset;
  j["stability_term"] = r.stability_term;
  j["optimization_term"] = r.optimization_term;
  j["concentration_term"] = r.concentration_term;
  j["total_excess"] = r.total_excess;
  j["total_excess_meaning"] = "upper bound on E - E_app";
  auto& terms = j["terms"] = nlohmann::json::array();
  for (const auto& t : r.terms) terms.push_back({{"name", t.name}, {"group", t.group}, {"value", t.value}});
  return j;
}

namespace detail {
inline void require_nonnegative(const std::map<std::string, double>& inputs, const char* who) {
  for (const auto& [name, v] : inputs)
    if (!(v >= 0.0) || !std::isfinite(v))
      throw ArgumentError(fmt::format("{}: input {} must be finite and >= 0 (got {})", who, name, v));
}

inline void convention_notes(BoundReport& r, const std::string& rho_source) {
  r.notes["rho_source"] = rho_source;
  r.notes["norm_convention"] =
      "rho1 measured as squared parameter-space distance; equals the hypothesis-space norm for the "
      "linear kernel, other kernels differ by kernel-norm factors";
}
}  // namespace detail

/// E_{S,A} E - E_app <= 2 beta0 + rho0 + (gamma/2) rho1
///                      + sqrt(rho1 (L^2/(2n) + 6 L gamma beta1)).
inline BoundReport expected_bound(const StabilityConstants& beta, const ConvergenceErrors& rho, double L,
                                  double gamma, double n, const std::string& rho_source = "single-run") {
  BoundReport r;
  r.kind = BoundKind::expected;
  r.inputs = {{"beta0", beta.beta0}, {"beta1", beta.beta1}, {"rho0", rho.rho0}, {"rho1", rho.rho1},
              {"L", L}, {"gamma", gamma}, {"n", n}};
  detail::require_nonnegative(r.inputs, "expected_bound");
  if (!(n > 0.0)) throw ArgumentError("expected_bound: n must be positive");
  detail::convention_notes(r, rho_source);
  r.add("2*beta0", "stability", 2.0 * beta.beta0);
  r.add("rho0", "optimization", rho.rho0);
  r.add("gamma/2*rho1", "optimization", 0.5 * gamma * rho.rho1);
  r.add("sqrt(rho1*(L^2/(2n)+6*L*gamma*beta1))", "concentration",
        std::sqrt(rho.rho1 * (L * L / (2.0 * n) + 6.0 * L * gamma * beta.beta1)));
  return r;
}

/// With probability >= 1 - delta:
/// E - E_app <= 2 beta0 + rho0 + (gamma/2) rho1 + 2 gamma beta1 sqrt(rho1)
///   + (4 n beta0 + 2M + (4 n gamma beta1 + L) sqrt(rho1)) sqrt(ln(4/delta) / (2n)).
inline BoundReport high_prob_bound(const StabilityConstants& beta, const ConvergenceErrors& rho, double L,
                                   double gamma, double M, double n, double delta,
                                   const std::string& rho_source = "single-run") {
  if (!(delta > 0.0 && delta < 1.0)) throw ArgumentError("high_prob_bound: delta must lie in (0, 1)");
  if (!(M > 0.0)) throw ArgumentError("high_prob_bound: M must be > 0");
  BoundReport r;
  r.kind = BoundKind::high_prob;
  r.inputs = {{"beta0", beta.beta0}, {"beta1", beta.beta1}, {"rho0", rho.rho0}, {"rho1", rho.rho1},
              {"L", L}, {"gamma", gamma}, {"M", M}, {"n", n}, {"delta", delta}};
  detail::require_nonnegative(r.inputs, "high_prob_bound");
  if (!(n > 0.0)) throw ArgumentError("high_prob_bound: n must be positive");
  detail::convention_notes(r, rho_source);
  const double root_rho1 = std::sqrt(rho.rho1);
  r.add("2*beta0", "stability", 2.0 * beta.beta0);
  r.add("rho0", "optimization", rho.rho0);
  r.add("gamma/2*rho1", "optimization", 0.5 * gamma * rho.rho1);
  r.add("2*gamma*beta1*sqrt(rho1)", "optimization", 2.0 * gamma * beta.beta1 * root_rho1);
  const double scale = std::sqrt(std::log(4.0 / delta) / (2.0 * n));
  r.add("(4n*beta0+2M+(4n*gamma*beta1+L)*sqrt(rho1))*sqrt(ln(4/delta)/(2n))", "concentration",
        (4.0 * n * beta.beta0 + 2.0 * M + (4.0 * n * gamma * beta.beta1 + L) * root_rho1) * scale);
  return r;
}

/// True when min_t rho2(t) <= gamma^2 eps0^2, the iteration count after which
/// the nonconvex bound applies.
inline bool t1_reached(double min_rho2, double gamma, double epsilon0) {
  return min_rho2 <= gamma * gamma * epsilon0 * epsilon0;
}

/// E - E_app <= 2 beta0 + [R(w_loc) - R(w*)] + (L/mu) sqrt(min_t rho2(t)).
/// mu, the local gap and the T1 certificate are caller assumptions.
inline BoundReport nonconvex_bound(double beta0, double L, double mu, double min_rho2, double local_gap,
                                   bool t1_certified, const std::string& rho_source = "single-run") {
  if (!t1_certified)
    throw PreconditionError("nonconvex_bound: T1 not reached (min rho2 above gamma^2 eps0^2 or uncertified)");
  if (!(mu > 0.0)) throw ArgumentError("nonconvex_bound: mu must be > 0");
  BoundReport r;
  r.kind = BoundKind::nonconvex;
  r.inputs = {{"beta0", beta0}, {"L", L}, {"mu", mu}, {"min_rho2", min_rho2}, {"local_gap", local_gap}};
  detail::require_nonnegative(r.inputs, "nonconvex_bound");
  detail::convention_notes(r, rho_source);
  r.notes["assumptions"] = "mu, local_gap and the T1 certificate are user-supplied, not inferred";
  r.add("2*beta0", "stability", 2.0 * beta0);
  r.add("R(w_loc)-R(w*)", "optimization", local_gap);
  r.add("L/mu*sqrt(min_rho2)", "optimization", L / mu * std::sqrt(min_rho2));
  return r;
}

// ---------------------------------------------------------------------------
// Empirical stability

struct StabilityMeasurement {
  double max_loss_change = 0.0;          // |l(w_S, z) - l(w_{S\j}, z)|
  double max_output_change = 0.0;        // ||w_S - w_{S\j}||
  double max_prediction_change = 0.0;    // |f_S(x) - f_{S\j}(x)| at the probe
  double max_replace_loss_change = 0.0;  // same as above with S^j
  double max_replace_output_change = 0.0;
  double K = 0.0;  // max feature norm over the data and the candidate pool
  std::size_t trials = 0;
};

/// Replace-one / leave-one-out audit with exact minimizers. Each trial draws
/// j from the training set and a replacement z' and probe z from `pool`
/// (fresh draws from the same distribution), using a per-trial seed derived
/// from `seed`. Leave-one-out problems keep the 1/n normalization.
template <class Builder>
StabilityMeasurement empirical_stability(Builder&& build, const Dataset& data, const Dataset& pool,
                                         std::size_t trials, std::uint64_t seed, double solver_tolerance) {
  if (pool.size() < 2) throw ArgumentError("empirical_stability: pool needs at least 2 instances");
  if (pool.dim() != data.dim()) throw ArgumentError("empirical_stability: pool dimension mismatch");
  const MinimizeOptions solve{solver_tolerance};
  const Objective<LinearModel> base = build(data);
  const ParameterVector w_s = minimize(base, solve);
  const auto& model = base.model();
  const LossSpec loss = base.loss();

  StabilityMeasurement m;
  m.trials = trials;
  m.K = std::max(data.max_row_norm(), pool.max_row_norm());
  for (std::size_t t = 0; t < trials; ++t) {
    Rng rng(derive_seed(seed, t));
    const std::size_t j = rng.index(data.size());
    const std::size_t a = rng.index(pool.size());
    std::size_t b = rng.index(pool.size() - 1);
    if (b >= a) ++b;
    const Instance z_new = pool.instance(a);
    const Instance probe = pool.instance(b);

    const ParameterVector w_loo = minimize(base.leave_one_out(j), solve);
    const ParameterVector w_rep = minimize(build(replace_instance(data, j, z_new)), solve);

    const auto x = probe.features.transpose();
    const double l_s = model.loss(w_s, x, probe.label, loss);
    m.max_loss_change = std::max(m.max_loss_change, std::abs(l_s - model.loss(w_loo, x, probe.label, loss)));
    m.max_replace_loss_change =
        std::max(m.max_replace_loss_change, std::abs(l_s - model.loss(w_rep, x, probe.label, loss)));
    m.max_output_change = std::max(m.max_output_change, (w_s - w_loo).norm());
    m.max_replace_output_change = std::max(m.max_replace_output_change, (w_s - w_rep).norm());
    m.max_prediction_change =
        std::max(m.max_prediction_change, std::abs(model.output(w_s, x) - model.output(w_loo, x)));
  }
  return m;
}

// ---------------------------------------------------------------------------
// Order estimates. Hidden constants collapse to one constant_factor, so the
// numbers are only meaningful for comparisons at a fixed factor.

inline constexpr const char* kOrderEstimateLabel = "order estimate - valid for comparisons at fixed constant";

enum class Algorithm { gd, sgd, svrg };
enum class Regime { convex, nonconvex };

inline std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::gd: return "gd";
    case Algorithm::sgd: return "sgd";
    case Algorithm::svrg: return "svrg";
  }
  return "?";
}

struct SufficientTraining {
  double iterations = 0.0;
  double time_units = 0.0;
  std::string label = kOrderEstimateLabel;
};

/// Sufficient training iterations/time: the point where the optimization
/// error falls below the O(1/n) estimation error.
inline SufficientTraining sufficient_training(Algorithm algorithm, Regime regime, double kappa, double n,
                                              double d, std::optional<double> epsilon0,
                                              double constant_factor = 1.0) {
  if (!(constant_factor > 0.0)) throw ArgumentError("sufficient_training: constant_factor must be > 0");
  if (!(n > 0.0 && d > 0.0)) throw ArgumentError("sufficient_training: n and d must be > 0");
  SufficientTraining out;
  if (regime == Regime::convex) {
    if (!(kappa > 0.0)) throw ArgumentError("sufficient_training: kappa must be > 0");
    switch (algorithm) {
      case Algorithm::gd:
        out.iterations = kappa * std::log(n);
        out.time_units = n * d * kappa * std::log(n);
        break;
      case Algorithm::sgd:
        out.iterations = kappa * kappa * n;
        out.time_units = n * d * kappa * kappa;
        break;
      case Algorithm::svrg:
        out.iterations = kappa * std::log(n * kappa);
        out.time_units = (n * d + d * kappa) * std::log(n * kappa);
        break;
    }
  } else {
    if (!epsilon0) throw ArgumentError("sufficient_training: nonconvex regime needs epsilon0");
    const double e = *epsilon0;
    if (!(e > 0.0)) throw ArgumentError("sufficient_training: epsilon0 must be > 0");
    const double inv2 = 1.0 / (e * e), inv4 = inv2 * inv2;
    switch (algorithm) {
      case Algorithm::gd:
        out.iterations = inv2 + n * n;
        out.time_units = n * inv2 + n * n * n;
        break;
      case Algorithm::sgd:
        out.iterations = inv4 + std::pow(n, 4.0);
        out.time_units = inv4 + std::pow(n, 4.0);
        break;
      case Algorithm::svrg:
        out.iterations = inv2 + n * n;
        out.time_units = std::pow(n, 2.0 / 3.0) * inv2 + std::pow(n, 8.0 / 3.0);
        break;
    }
  }
  out.iterations *= constant_factor;
  out.time_units *= constant_factor;
  return out;
}

/// High-probability generalization order for GD/SGD with unit constants:
/// sqrt(ln(1/delta)/n) plus kappa^2 log(log(T)/delta)/T (SGD) or
/// exp(-kappa T) (GD, as stated for the deterministic method).
inline double corollary_orders(Algorithm algorithm, double kappa, double n, double T, double delta) {
  if (!(T >= 2.0)) throw ArgumentError("corollary_orders: T must be >= 2");
  if (!(delta > 0.0 && delta < 1.0)) throw ArgumentError("corollary_orders: delta must lie in (0, 1)");
  if (!(kappa > 0.0 && n > 0.0)) throw ArgumentError("corollary_orders: kappa and n must be > 0");
  const double estimation = std::sqrt(std::log(1.0 / delta) / n);
  switch (algorithm) {
    case Algorithm::sgd: return estimation + kappa * kappa * std::log(std::log(T) / delta) / T;
    case Algorithm::gd: return estimation + std::exp(-kappa * T);
    case Algorithm::svrg: break;
  }
  throw ArgumentError("corollary_orders: only gd and sgd have stated orders");
}

}  // namespace rerm
