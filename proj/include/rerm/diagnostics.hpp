#pragma once

// Self-checks exposed through the CLI: analytic vs finite-difference
// gradients, and the replace-one stability audit for logistic regression.

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rerm/bounds.hpp"
#include "rerm/data.hpp"
#include "rerm/model.hpp"
#include "rerm/objective.hpp"
#include "rerm/oracles.hpp"
#include "rerm/rng.hpp"

namespace rerm {

struct GradientCheck {
  std::string family;
  std::size_t probes = 0;
  double worst_mismatch = 0.0;
  double tolerance = 1e-4;
  bool passed() const { return worst_mismatch <= tolerance; }
};

namespace detail {
template <PredictionModel Model>
GradientCheck probe_gradients(std::string family, const Model& model, LossSpec loss, const Dataset& data,
                              std::size_t probes, Rng& rng, double w_scale, double h, double tol) {
  GradientCheck out{std::move(family), probes, 0.0, tol};
  for (std::size_t k = 0; k < probes; ++k) {
    ParameterVector w(static_cast<Eigen::Index>(model.param_count()));
    for (auto& v : w) v = w_scale * rng.normal();
    const Instance z = data.instance(rng.index(data.size()));
    const auto x = z.features.transpose();
    const ParameterVector analytic = loss_gradient(model, w, z, loss);
    const Eigen::VectorXd numeric = finite_diff_gradient(
        [&](const Eigen::VectorXd& v) { return model.loss(v, x, z.label, loss); }, w, h);
    out.worst_mismatch = std::max(out.worst_mismatch, gradient_mismatch(analytic, numeric));
  }
  return out;
}
}  // namespace detail

/// Squared and logistic loss on linear models, cross-entropy on a small MLP.
inline std::vector<GradientCheck> check_gradients(std::uint64_t seed, std::size_t probes = 30, double h = 1e-5,
                                                  double tolerance = 1e-4) {
  Rng rng(seed);
  std::vector<GradientCheck> out;
  const auto reg = generate_gaussian_regression(50, 8, 0.1, derive_seed(seed, 1)).dataset;
  out.push_back(detail::probe_gradients("squared/linear", LinearModel(8, true), LossSpec::squared(), reg,
                                        probes, rng, 1.0, h, tolerance));
  const auto bin = generate_logistic_classification(50, 8, 2.0, derive_seed(seed, 2));
  out.push_back(detail::probe_gradients("logistic/linear", LinearModel(8), LossSpec::logistic(), bin, probes,
                                        rng, 1.0, h, tolerance));
  const auto cls = generate_gaussian_classes(60, 6, 4, 2.0, derive_seed(seed, 3));
  out.push_back(detail::probe_gradients("cross_entropy/mlp", MlpModel(6, 7, 4), LossSpec::cross_entropy(), cls,
                                        probes, rng, 0.5, h, tolerance));
  return out;
}

struct StabilityAudit {
  StabilityMeasurement measured;
  StabilityConstants bound;
  double L = 1.0;
  double lambda = 0.0;
  std::size_t n = 0;
  bool loss_contained() const { return measured.max_loss_change <= bound.beta0; }
  bool output_contained() const { return measured.max_output_change <= bound.beta1; }
};

/// Logistic regression (L = 1) on synthetic data: measured replace-one and
/// leave-one-out changes against beta0 = K^2/(2 lambda n), beta1 = K/(2 lambda n).
inline StabilityAudit stability_audit(std::uint64_t seed, std::size_t n = 100, std::size_t d = 5,
                                      double lambda = 0.1, std::size_t trials = 200) {
  const Dataset data = generate_logistic_classification(n, d, 2.0, derive_seed(seed, 1));
  const Dataset pool = generate_logistic_classification(4 * trials, d, 2.0, derive_seed(seed, 2));
  const Objective<LinearModel> base(data, LinearModel(d), LossSpec::logistic(), lambda);
  StabilityAudit a;
  a.lambda = lambda;
  a.n = n;
  a.measured = empirical_stability([&](const Dataset& s) { return base.with_data(s); }, data, pool, trials,
                                   derive_seed(seed, 3), 1e-12);
  a.bound = kernel_stability(a.L, a.measured.K, lambda, static_cast<double>(n));
  return a;
}

inline nlohmann::json to_json(const StabilityAudit& a) {
  return {{"n", a.n},
          {"lambda", a.lambda},
          {"L", a.L},
          {"K", a.measured.K},
          {"trials", a.measured.trials},
          {"beta0", a.bound.beta0},
          {"beta1", a.bound.beta1},
          {"max_loss_change", a.measured.max_loss_change},
          {"max_replace_loss_change", a.measured.max_replace_loss_change},
          {"max_output_change", a.measured.max_output_change},
          {"max_replace_output_change", a.measured.max_replace_output_change},
          {"max_prediction_change", a.measured.max_prediction_change},
          {"loss_contained", a.loss_contained()},
          {"output_contained", a.output_contained()}};
}

}  // namespace rerm
