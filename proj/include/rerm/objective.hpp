#pragma once

// The regularized empirical risk R_S^r(w) = (1/n) sum_i l(w, z_i) + lambda N(w)
// and the problem constants the bounds consume.

#include <Eigen/Dense>

#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <type_traits>

#include <fmt/format.h>

#include "rerm/data.hpp"
#include "rerm/error.hpp"
#include "rerm/loss.hpp"
#include "rerm/model.hpp"

namespace rerm {

template <PredictionModel Model>
class Objective {
 public:
  /// `normalizer` overrides the 1/n factor of the empirical risk. It is only
  /// used by leave-one-out problems, which keep the original n.
  Objective(std::shared_ptr<const Dataset> data, Model model, LossSpec loss, double lambda,
            std::optional<double> normalizer = std::nullopt)
      : data_(std::move(data)), model_(std::move(model)), loss_(loss), lambda_(lambda) {
    if (!data_) throw ArgumentError("Objective: null dataset");
    if (!(lambda_ >= 0.0) || !std::isfinite(lambda_))
      throw ArgumentError("Objective: lambda must be finite and >= 0");
    if (!model_.supports(loss_) || !loss_.compatible_with(data_->task()))
      throw ArgumentError("Objective: loss " + to_string(loss_.kind) + " is incompatible with " +
                          model_.architecture() + " on a " + to_string(data_->task()) + " task");
    if (model_.input_dim() != data_->dim())
      throw ArgumentError("Objective: model input dimension " + std::to_string(model_.input_dim()) +
                          " does not match data dimension " + std::to_string(data_->dim()));
    normalizer_ = normalizer.value_or(static_cast<double>(data_->size()));
    if (!(normalizer_ > 0.0)) throw ArgumentError("Objective: normalizer must be positive");
  }

  Objective(Dataset data, Model model, LossSpec loss, double lambda)
      : Objective(std::make_shared<const Dataset>(std::move(data)), std::move(model), loss, lambda) {}

  const Dataset& data() const { return *data_; }
  std::shared_ptr<const Dataset> shared_data() const { return data_; }
  const Model& model() const { return model_; }
  LossSpec loss() const { return loss_; }
  double lambda() const { return lambda_; }
  std::size_t size() const { return data_->size(); }
  std::size_t param_count() const { return model_.param_count(); }
  double normalizer() const { return normalizer_; }

  /// Same model/loss/lambda on other data.
  Objective with_data(Dataset data) const {
    return Objective(std::make_shared<const Dataset>(std::move(data)), model_, loss_, lambda_);
  }

  /// Objective on S^{\j}, keeping the 1/n normalization of the full set.
  Objective leave_one_out(std::size_t j) const {
    return Objective(std::make_shared<const Dataset>(remove_instance(*data_, j)), model_, loss_,
                     lambda_, normalizer_);
  }

  double instance_loss(const ParameterVector& w, std::size_t i) const {
    check_index(i);
    return model_.loss(w, data_->row(i), data_->label(i), loss_);
  }

  /// R_S(w) on the training set.
  double empirical_risk(const ParameterVector& w) const {
    check_params(w);
    long double sum = 0.0L;
    for (std::size_t i = 0; i < data_->size(); ++i)
      sum += model_.loss(w, data_->row(i), data_->label(i), loss_);
    return static_cast<double>(sum / static_cast<long double>(normalizer_));
  }

  /// Mean loss over another dataset (held-out risk estimate).
  double empirical_risk(const ParameterVector& w, const Dataset& other) const {
    check_params(w);
    if (other.dim() != data_->dim() || !(other.task() == data_->task()))
      throw ArgumentError("empirical_risk: evaluation set does not match the training task");
    long double sum = 0.0L;
    for (std::size_t i = 0; i < other.size(); ++i)
      sum += model_.loss(w, other.row(i), other.label(i), loss_);
    return static_cast<double>(sum / static_cast<long double>(other.size()));
  }

  double penalty(const ParameterVector& w) const { return lambda_ * model_.regularizer(w); }

  double regularized_risk(const ParameterVector& w) const { return empirical_risk(w) + penalty(w); }

  /// grad += scale * grad_w l(w, z_i). Returns l(w, z_i).
  double add_instance_gradient(const ParameterVector& w, std::size_t i, double scale,
                               ParameterVector& grad) const {
    return model_.accumulate_loss_gradient(w, data_->row(i), data_->label(i), loss_, scale, grad);
  }

  void add_penalty_gradient(const ParameterVector& w, double scale, ParameterVector& grad) const {
    if (lambda_ != 0.0) model_.add_regularizer_gradient(w, scale * lambda_, grad);
  }

  /// grad R_S^r(w), summed in index order.
  ParameterVector full_gradient(const ParameterVector& w) const {
    check_params(w);
    ParameterVector grad = ParameterVector::Zero(w.size());
    const double scale = 1.0 / normalizer_;
    for (std::size_t i = 0; i < data_->size(); ++i) add_instance_gradient(w, i, scale, grad);
    add_penalty_gradient(w, 1.0, grad);
    return grad;
  }

  /// grad l(w, z_i) + lambda grad N(w). Its mean over i is full_gradient(w).
  ParameterVector stochastic_gradient(const ParameterVector& w, std::size_t i) const {
    check_params(w);
    check_index(i);
    ParameterVector grad = ParameterVector::Zero(w.size());
    add_instance_gradient(w, i, instance_weight(), grad);
    add_penalty_gradient(w, 1.0, grad);
    return grad;
  }

  /// n_data / normalizer: 1 except for leave-one-out objectives.
  double instance_weight() const { return static_cast<double>(data_->size()) / normalizer_; }

  /// R_S^r(w) - R_S^r(reference). For the squared loss on a linear model the
  /// objective is quadratic and the gap is evaluated from its exact expansion
  /// around the reference, which stays accurate when the gap is near 1e-15.
  double regularized_gap(const ParameterVector& w, const ParameterVector& reference) const {
    check_params(w);
    check_params(reference);
    if constexpr (std::is_same_v<Model, LinearModel>) {
      if (loss_.kind == LossKind::squared) {
        const ParameterVector e = w - reference;
        const double linear = full_gradient(reference).dot(e);
        long double curvature = 0.0L;
        for (std::size_t i = 0; i < data_->size(); ++i) {
          const double fe = model_.output(e, data_->row(i));
          curvature += fe * fe;
        }
        return linear + static_cast<double>(curvature / static_cast<long double>(normalizer_)) +
               lambda_ * model_.regularizer(e);
      }
    }
    return regularized_risk(w) - regularized_risk(reference);
  }

 private:
  void check_params(const ParameterVector& w) const {
    if (static_cast<std::size_t>(w.size()) != model_.param_count())
      throw ArgumentError("Objective: parameter vector has length " + std::to_string(w.size()) +
                          ", expected " + std::to_string(model_.param_count()));
  }
  void check_index(std::size_t i) const {
    if (i >= data_->size())
      throw ArgumentError("Objective: instance index " + std::to_string(i) + " out of range for n=" +
                          std::to_string(data_->size()));
  }

  std::shared_ptr<const Dataset> data_;
  Model model_;
  LossSpec loss_;
  double lambda_;
  double normalizer_ = 1.0;
};

// ---------------------------------------------------------------------------
// Problem constants

/// Constants of a convex linear R-ERM problem.
///
/// L, gamma and M are output-space constants of the loss, certified on the
/// parameter ball of radius `domain_radius`. gamma_w and mu are the smoothness
/// and strong convexity of R_S^r in parameter space. `kappa` is the component
/// condition number mean_i(gamma_i) / mu, with gamma_i the smoothness of
/// l(., z_i) + lambda N; `kappa_full` = gamma_w / mu.
struct ProblemConstants {
  double L = 0.0;
  double gamma = 0.0;
  double gamma_w = 0.0;
  double mu = 0.0;
  double kappa = 0.0;
  double kappa_full = 0.0;
  double gamma_instance_mean = 0.0;
  double gamma_instance_max = 0.0;
  double K = 0.0;
  double M = 0.0;
  double domain_radius = 0.0;
  std::size_t eigen_iterations = 0;
};

struct EigenOptions {
  double tolerance = 1e-8;
  std::size_t max_iterations = 200000;
};

namespace detail {

/// Largest eigenvalue of a symmetric PSD matrix by power iteration; stops when
/// ||A v - theta v|| <= tol * theta.
inline double power_iteration(const Eigen::MatrixXd& a, const EigenOptions& opt, std::size_t& iters,
                              const char* what) {
  const auto n = a.rows();
  Eigen::VectorXd v(n);
  Rng rng(0x5eed);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = 1.0 + 0.1 * rng.uniform();
  v.normalize();
  double theta = 0.0, residual = 0.0;
  for (std::size_t k = 1; k <= opt.max_iterations; ++k) {
    Eigen::VectorXd av = a * v;
    theta = v.dot(av);
    residual = (av - theta * v).norm();
    if (residual <= opt.tolerance * std::abs(theta) || av.norm() == 0.0) {
      iters += k;
      return theta;
    }
    v = av / av.norm();
  }
  throw NumericError(fmt::format("{}: eigen-iteration did not converge after {} iterations "
                                 "(estimate {}, residual {})",
                                 what, opt.max_iterations, theta, residual));
}

/// Smallest eigenvalue of a symmetric positive definite matrix by inverse iteration.
inline double inverse_iteration(const Eigen::MatrixXd& a, const EigenOptions& opt, std::size_t& iters,
                                const char* what) {
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() != Eigen::Success)
    throw NumericError(std::string(what) + ": Hessian bound is not positive definite");
  const auto n = a.rows();
  Eigen::VectorXd v(n);
  Rng rng(0x1eed);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = 1.0 + 0.1 * rng.uniform();
  v.normalize();
  double theta = 0.0, residual = 0.0;
  for (std::size_t k = 1; k <= opt.max_iterations; ++k) {
    Eigen::VectorXd next = llt.solve(v);
    next.normalize();
    const Eigen::VectorXd av = a * next;
    theta = next.dot(av);
    residual = (av - theta * next).norm();
    v = next;
    if (residual <= opt.tolerance * std::abs(theta)) {
      iters += k;
      return theta;
    }
  }
  throw NumericError(fmt::format("{}: inverse iteration did not converge after {} iterations "
                                 "(estimate {}, residual {})",
                                 what, opt.max_iterations, theta, residual));
}

}  // namespace detail

/// Gram matrix (1/normalizer) sum_i x~_i x~_i^T of the (bias-augmented) features.
inline Eigen::MatrixXd design_gram(const Objective<LinearModel>& obj) {
  const auto& x = obj.data().features();
  const bool bias = obj.model().has_bias();
  const auto p = static_cast<Eigen::Index>(obj.param_count());
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(p, p);
  const auto d = x.cols();
  gram.topLeftCorner(d, d).noalias() = x.transpose() * x;
  if (bias) {
    const Eigen::VectorXd col_sums = x.colwise().sum().transpose();
    gram.block(0, d, d, 1) = col_sums;
    gram.block(d, 0, 1, d) = col_sums.transpose();
    gram(d, d) = static_cast<double>(x.rows());
  }
  return gram / obj.normalizer();
}

/// Largest parameter norm on the level set {w : R_S^r(w) <= R_S^r(w0)}, doubled.
template <PredictionModel Model>
double default_domain_radius(const Objective<Model>& obj, const ParameterVector& w0) {
  if (!(obj.lambda() > 0.0))
    throw ArgumentError("default_domain_radius: lambda must be positive");
  return 2.0 * std::sqrt(obj.regularized_risk(w0) / obj.lambda());
}

/// Smoothness, strong convexity and loss bounds for linear models. Nonconvex
/// (MLP) objectives have no certified constants and are rejected.
template <PredictionModel Model>
ProblemConstants estimate_constants(const Objective<Model>& obj, double domain_radius,
                                    const EigenOptions& opt = {}) {
  if (!(domain_radius > 0.0)) throw ArgumentError("estimate_constants: domain_radius must be > 0");
  if constexpr (!std::is_same_v<Model, LinearModel>) {
    throw ArgumentError("estimate_constants: constants are only certified for convex linear models");
  } else {
    const LossKind kind = obj.loss().kind;
    const bool bias = obj.model().has_bias();
    const double lambda = obj.lambda();
    // Curvature of the loss in its output: exact for squared, sup for logistic.
    const double curvature = kind == LossKind::squared ? 2.0 : 0.25;

    ProblemConstants c;
    c.domain_radius = domain_radius;

    Eigen::MatrixXd hessian = curvature * design_gram(obj);
    const auto d = static_cast<Eigen::Index>(obj.data().dim());
    hessian.topLeftCorner(d, d).diagonal().array() += 2.0 * lambda;

    c.gamma_w = detail::power_iteration(hessian, opt, c.eigen_iterations, "estimate_constants");
    if (kind == LossKind::squared) {
      c.mu = detail::inverse_iteration(hessian, opt, c.eigen_iterations, "estimate_constants");
    } else {
      if (bias)
        throw ArgumentError("estimate_constants: logistic loss with an unregularized bias is not "
                            "strongly convex");
      c.mu = 2.0 * lambda;
    }
    if (!(c.mu > 0.0)) throw NumericError("estimate_constants: objective is not strongly convex");

    double sum_sq = 0.0, max_sq = 0.0, k_sq = 0.0, y_max = 0.0;
    const auto& data = obj.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double sq = data.row(i).squaredNorm() + (bias ? 1.0 : 0.0);
      sum_sq += sq;
      max_sq = std::max(max_sq, sq);
      k_sq = std::max(k_sq, sq);
      y_max = std::max(y_max, std::abs(data.label(i)));
    }
    c.gamma_instance_mean =
        obj.instance_weight() * curvature * sum_sq / static_cast<double>(data.size()) + 2.0 * lambda;
    c.gamma_instance_max = obj.instance_weight() * curvature * max_sq + 2.0 * lambda;
    c.kappa = c.gamma_instance_mean / c.mu;
    c.kappa_full = c.gamma_w / c.mu;
    c.K = std::sqrt(k_sq);

    const double output_bound = domain_radius * c.K;
    if (kind == LossKind::squared) {
      c.L = 2.0 * (output_bound + y_max);
      c.gamma = 2.0;
      c.M = (output_bound + y_max) * (output_bound + y_max);
    } else {
      c.L = 1.0;
      c.gamma = 0.25;
      c.M = loss::softplus(output_bound);
    }
    return c;
  }
}

}  // namespace rerm
