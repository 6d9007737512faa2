#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <string>

#include "rerm/data.hpp"
#include "rerm/error.hpp"

namespace rerm {

enum class LossKind { squared, logistic, cross_entropy };

/// Per-instance loss l(f, z). Squared: (f - y)^2. Logistic: log(1 + e^{-y f})
/// with y in {-1, +1}. Cross-entropy: -log softmax(f)_y over a logit vector.
struct LossSpec {
  LossKind kind = LossKind::squared;

  static LossSpec squared() { return {LossKind::squared}; }
  static LossSpec logistic() { return {LossKind::logistic}; }
  static LossSpec cross_entropy() { return {LossKind::cross_entropy}; }

  bool scalar_output() const { return kind != LossKind::cross_entropy; }

  bool compatible_with(const Task& task) const {
    switch (kind) {
      case LossKind::squared: return task.kind == TaskKind::regression;
      case LossKind::logistic: return task.kind == TaskKind::binary;
      case LossKind::cross_entropy: return task.kind == TaskKind::multiclass;
    }
    return false;
  }

  friend bool operator==(const LossSpec&, const LossSpec&) = default;
};

inline std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::squared: return "squared";
    case LossKind::logistic: return "logistic";
    case LossKind::cross_entropy: return "cross_entropy";
  }
  return "unknown";
}

namespace loss {

/// log(1 + e^t) without overflow.
inline double softplus(double t) { return t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }

inline double sigmoid(double t) {
  if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

inline double scalar_value(LossKind kind, double f, double y) {
  switch (kind) {
    case LossKind::squared: return (f - y) * (f - y);
    case LossKind::logistic: return softplus(-y * f);
    case LossKind::cross_entropy: break;
  }
  throw ArgumentError("scalar loss requested for cross-entropy");
}

/// dl/df.
inline double scalar_derivative(LossKind kind, double f, double y) {
  switch (kind) {
    case LossKind::squared: return 2.0 * (f - y);
    case LossKind::logistic: return -y * sigmoid(-y * f);
    case LossKind::cross_entropy: break;
  }
  throw ArgumentError("scalar loss requested for cross-entropy");
}

/// Cross-entropy of logits against class index y. Overwrites `logits` with
/// softmax(logits) - e_y (the gradient w.r.t. the logits) and returns the loss.
inline double cross_entropy_in_place(Eigen::Ref<Eigen::VectorXd> logits, std::size_t y) {
  const double top = logits.maxCoeff();
  logits.array() -= top;
  logits = logits.array().exp().matrix();
  const double total = logits.sum();
  const double log_total = std::log(total);
  const double value = log_total - std::log(logits[static_cast<Eigen::Index>(y)]);
  logits /= total;
  logits[static_cast<Eigen::Index>(y)] -= 1.0;
  return value;
}

inline double cross_entropy(Eigen::VectorXd logits, std::size_t y) {
  const double top = logits.maxCoeff();
  const double lse = top + std::log((logits.array() - top).exp().sum());
  return lse - logits[static_cast<Eigen::Index>(y)];
}

}  // namespace loss
}  // namespace rerm
