#pragma once

// Reference oracles: the closed-form ridge solution, a gradient-descent
// minimizer for smooth convex problems, and central finite differences.

#include <Eigen/Dense>

#include <cmath>
#include <functional>

#include <fmt/format.h>

#include "rerm/data.hpp"
#include "rerm/error.hpp"
#include "rerm/model.hpp"
#include "rerm/objective.hpp"

namespace rerm {

/// Solves ((2/n) X~^T X~ + 2 lambda P) w = (2/n) X~^T y, the stationarity
/// condition of mean (f(x) - y)^2 + lambda ||w||^2 (P masks the bias).
/// Fails unless ||grad R_S^r(w)|| <= residual_tolerance afterwards.
inline ParameterVector ridge_closed_form(const Objective<LinearModel>& obj,
                                         double residual_tolerance = 1e-8) {
  if (obj.loss().kind != LossKind::squared)
    throw ArgumentError("ridge_closed_form: objective must use the squared loss");
  const auto& data = obj.data();
  const auto d = static_cast<Eigen::Index>(data.dim());
  const auto p = static_cast<Eigen::Index>(obj.param_count());
  Eigen::MatrixXd system = 2.0 * design_gram(obj);
  system.topLeftCorner(d, d).diagonal().array() += 2.0 * obj.lambda();
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(p);
  rhs.head(d).noalias() = data.features().transpose() * data.labels();
  if (obj.model().has_bias()) rhs[d] = data.labels().sum();
  rhs *= 2.0 / obj.normalizer();

  Eigen::LLT<Eigen::MatrixXd> llt(system);
  if (llt.info() != Eigen::Success)
    throw NumericError("ridge_closed_form: normal equations are not positive definite (lambda > 0 required)");
  ParameterVector w = llt.solve(rhs);
  // One step of iterative refinement.
  w += llt.solve(rhs - system * w);
  const double residual = obj.full_gradient(w).norm();
  if (!(residual <= residual_tolerance))
    throw NumericError(fmt::format("ridge_closed_form: gradient residual {} exceeds {}", residual,
                                   residual_tolerance));
  return w;
}

inline ParameterVector ridge_closed_form(const Dataset& data, double lambda,
                                         double residual_tolerance = 1e-8) {
  if (!(lambda > 0.0)) throw ArgumentError("ridge_closed_form: lambda must be > 0");
  return ridge_closed_form(Objective<LinearModel>(data, LinearModel(data.dim()), LossSpec::squared(), lambda),
                           residual_tolerance);
}

struct MinimizeOptions {
  double gradient_tolerance = 1e-10;
  std::size_t max_iterations = 1000000;
};

/// Minimizer of a strongly convex linear objective. Squared loss uses the
/// closed form; otherwise GD with eta = 1/gamma_w runs until
/// ||grad R_S^r|| <= gradient_tolerance, and hitting the cap is an error.
inline ParameterVector minimize(const Objective<LinearModel>& obj, const MinimizeOptions& opt = {},
                                std::size_t* iterations_used = nullptr) {
  if (obj.loss().kind == LossKind::squared)
    return ridge_closed_form(obj, std::max(opt.gradient_tolerance, 1e-8));
  const ParameterVector w0 = obj.model().initial_parameters();
  const ProblemConstants c = estimate_constants(obj, default_domain_radius(obj, w0));
  const double eta = 1.0 / c.gamma_w;
  ParameterVector w = w0;
  for (std::size_t t = 0; t < opt.max_iterations; ++t) {
    const ParameterVector g = obj.full_gradient(w);
    const double norm = g.norm();
    if (!std::isfinite(norm)) throw NumericError("minimize: non-finite gradient");
    if (norm <= opt.gradient_tolerance) {
      if (iterations_used) *iterations_used = t;
      return w;
    }
    w -= eta * g;
  }
  throw NumericError(fmt::format("minimize: gradient norm above {} after {} GD iterations",
                                 opt.gradient_tolerance, opt.max_iterations));
}

/// Central differences (f(w + h e_i) - f(w - h e_i)) / (2h) per coordinate.
inline Eigen::VectorXd finite_diff_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                            const Eigen::VectorXd& w, double h) {
  if (!(h > 0.0)) throw ArgumentError("finite_diff_gradient: h must be > 0");
  Eigen::VectorXd g(w.size());
  Eigen::VectorXd probe = w;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    probe[i] = w[i] + h;
    const double up = f(probe);
    probe[i] = w[i] - h;
    const double down = f(probe);
    probe[i] = w[i];
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// ||analytic - numeric||_inf / (1 + ||analytic||_inf).
inline double gradient_mismatch(const Eigen::VectorXd& analytic, const Eigen::VectorXd& numeric) {
  return (analytic - numeric).lpNorm<Eigen::Infinity>() / (1.0 + analytic.lpNorm<Eigen::Infinity>());
}

}  // namespace rerm
