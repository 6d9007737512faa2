#pragma once

// Prediction models with exact analytic gradients. Parameters live in one
// flat vector (ParameterVector); models are stateless descriptions of how to
// read it.

#include <Eigen/Dense>

#include <concepts>
#include <cstdint>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include <fmt/format.h>

#include "rerm/data.hpp"
#include "rerm/error.hpp"
#include "rerm/loss.hpp"
#include "rerm/rng.hpp"

namespace rerm {

using ParameterVector = Eigen::VectorXd;
using ConstRowRef = Eigen::Ref<const Eigen::RowVectorXd>;

/// What the optimizers and objectives need from a model.
template <class M>
concept PredictionModel = requires(const M& m, const ParameterVector& w, ConstRowRef x, double y,
                                   LossSpec loss, double scale, ParameterVector& grad) {
  { m.input_dim() } -> std::convertible_to<std::size_t>;
  { m.param_count() } -> std::convertible_to<std::size_t>;
  { m.output_dim() } -> std::convertible_to<std::size_t>;
  { m.predict(w, x) } -> std::convertible_to<Eigen::VectorXd>;
  { m.loss(w, x, y, loss) } -> std::convertible_to<double>;
  { m.accumulate_loss_gradient(w, x, y, loss, scale, grad) } -> std::convertible_to<double>;
  { m.regularizer(w) } -> std::convertible_to<double>;
  m.add_regularizer_gradient(w, scale, grad);
  { m.architecture() } -> std::convertible_to<std::string>;
  { m.supports(loss) } -> std::convertible_to<bool>;
};

namespace detail {
inline void check_dims(std::size_t got_w, std::size_t want_w, std::size_t got_x, std::size_t want_x) {
  if (got_w != want_w)
    throw ArgumentError("parameter vector has length " + std::to_string(got_w) + ", model expects " +
                        std::to_string(want_w));
  if (got_x != want_x)
    throw ArgumentError("input has dimension " + std::to_string(got_x) + ", model expects " +
                        std::to_string(want_x));
}
}  // namespace detail

/// f(x) = <w, x> (+ b). The bias, when enabled, is the last parameter and is
/// excluded from the regularizer.
class LinearModel {
 public:
  explicit LinearModel(std::size_t input_dim, bool bias = false) : d_(input_dim), bias_(bias) {
    if (d_ == 0) throw ArgumentError("LinearModel: input dimension must be positive");
  }

  std::size_t input_dim() const { return d_; }
  std::size_t param_count() const { return d_ + (bias_ ? 1 : 0); }
  std::size_t output_dim() const { return 1; }
  bool has_bias() const { return bias_; }

  bool supports(LossSpec loss) const { return loss.scalar_output(); }

  double output(const ParameterVector& w, ConstRowRef x) const {
    detail::check_dims(static_cast<std::size_t>(w.size()), param_count(),
                       static_cast<std::size_t>(x.size()), d_);
    return raw_output(w, x);
  }

  Eigen::VectorXd predict(const ParameterVector& w, ConstRowRef x) const {
    return Eigen::VectorXd::Constant(1, output(w, x));
  }

  double loss(const ParameterVector& w, ConstRowRef x, double y, LossSpec spec) const {
    check_loss(spec);
    return loss::scalar_value(spec.kind, output(w, x), y);
  }

  /// grad += scale * d l(w, (x, y)) / dw. Returns the loss value.
  double accumulate_loss_gradient(const ParameterVector& w, ConstRowRef x, double y, LossSpec spec,
                                  double scale, ParameterVector& grad) const {
    check_loss(spec);
    const double f = output(w, x);
    const double g = scale * loss::scalar_derivative(spec.kind, f, y);
    grad.head(static_cast<Eigen::Index>(d_)) += g * x.transpose();
    if (bias_) grad[static_cast<Eigen::Index>(d_)] += g;
    return loss::scalar_value(spec.kind, f, y);
  }

  double regularizer(const ParameterVector& w) const {
    return w.head(static_cast<Eigen::Index>(d_)).squaredNorm();
  }

  void add_regularizer_gradient(const ParameterVector& w, double scale, ParameterVector& grad) const {
    grad.head(static_cast<Eigen::Index>(d_)) += 2.0 * scale * w.head(static_cast<Eigen::Index>(d_));
  }

  std::string architecture() const { return fmt::format("linear d={} bias={}", d_, bias_ ? 1 : 0); }

  ParameterVector initial_parameters() const { return ParameterVector::Zero(static_cast<Eigen::Index>(param_count())); }

 private:
  double raw_output(const ParameterVector& w, ConstRowRef x) const {
    double f = x.dot(w.head(static_cast<Eigen::Index>(d_)).transpose());
    if (bias_) f += w[static_cast<Eigen::Index>(d_)];
    return f;
  }

  void check_loss(LossSpec spec) const {
    if (!supports(spec))
      throw ArgumentError("LinearModel: loss " + to_string(spec.kind) + " needs a vector output");
  }

  std::size_t d_;
  bool bias_;
};

/// d -> hidden (sigmoid) -> classes (softmax), trained with cross-entropy.
///
/// Parameter layout: W1 (hidden x d, row-major), b1 (hidden), W2 (classes x
/// hidden, row-major), b2 (classes). All of them are regularized.
class MlpModel {
 public:
  explicit MlpModel(std::size_t input_dim, std::size_t hidden = 100, std::size_t classes = 10)
      : d_(input_dim), h_(hidden), k_(classes) {
    if (d_ == 0 || h_ == 0 || k_ < 2) throw ArgumentError("MlpModel: invalid layer sizes");
  }

  std::size_t input_dim() const { return d_; }
  std::size_t hidden_dim() const { return h_; }
  std::size_t output_dim() const { return k_; }
  std::size_t param_count() const { return h_ * d_ + h_ + k_ * h_ + k_; }

  bool supports(LossSpec loss) const { return loss.kind == LossKind::cross_entropy; }

  /// Output-layer pre-activations.
  Eigen::VectorXd logits(const ParameterVector& w, ConstRowRef x) const {
    check(w, x);
    Eigen::VectorXd hidden = hidden_activations(w, x);
    return w2(w) * hidden + b2(w);
  }

  /// Class probabilities.
  Eigen::VectorXd predict(const ParameterVector& w, ConstRowRef x) const {
    return softmax(logits(w, x));
  }

  double loss(const ParameterVector& w, ConstRowRef x, double y, LossSpec spec) const {
    check_loss(spec);
    return loss::cross_entropy(logits(w, x), class_index(y));
  }

  /// Backpropagation; grad += scale * d l / dw. Returns the loss value.
  double accumulate_loss_gradient(const ParameterVector& w, ConstRowRef x, double y, LossSpec spec,
                                  double scale, ParameterVector& grad) const {
    check_loss(spec);
    check(w, x);
    const Eigen::VectorXd hidden = hidden_activations(w, x);
    Eigen::VectorXd delta_out = w2(w) * hidden + b2(w);
    const double value = loss::cross_entropy_in_place(delta_out, class_index(y));

    Eigen::VectorXd delta_hidden = w2(w).transpose() * delta_out;
    delta_hidden.array() *= hidden.array() * (1.0 - hidden.array());

    auto g = layout(grad);
    g.w1.noalias() += scale * delta_hidden * x;
    g.b1 += scale * delta_hidden;
    g.w2.noalias() += scale * delta_out * hidden.transpose();
    g.b2 += scale * delta_out;
    return value;
  }

  double regularizer(const ParameterVector& w) const { return w.squaredNorm(); }

  void add_regularizer_gradient(const ParameterVector& w, double scale, ParameterVector& grad) const {
    grad += 2.0 * scale * w;
  }

  std::string architecture() const {
    return fmt::format("mlp d={} hidden={} classes={}", d_, h_, k_);
  }

  /// Uniform in [-a, a] with a = 1/sqrt(fan-in) per layer.
  ParameterVector initial_parameters(std::uint64_t seed) const {
    ParameterVector w(static_cast<Eigen::Index>(param_count()));
    Rng rng(seed);
    const double a1 = 1.0 / std::sqrt(static_cast<double>(d_));
    const double a2 = 1.0 / std::sqrt(static_cast<double>(h_));
    const auto first = static_cast<Eigen::Index>(h_ * d_ + h_);
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      const double a = i < first ? a1 : a2;
      w[i] = rng.uniform(-a, a);
    }
    return w;
  }

  static Eigen::VectorXd softmax(const Eigen::VectorXd& z) {
    Eigen::VectorXd p = (z.array() - z.maxCoeff()).exp().matrix();
    return p / p.sum();
  }

 private:
  using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using ConstMatMap =
      Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

  struct Layout {
    MatMap w1;
    Eigen::Map<Eigen::VectorXd> b1;
    MatMap w2;
    Eigen::Map<Eigen::VectorXd> b2;
  };

  Layout layout(ParameterVector& w) const {
    double* p = w.data();
    const auto h = static_cast<Eigen::Index>(h_), d = static_cast<Eigen::Index>(d_),
               k = static_cast<Eigen::Index>(k_);
    return {MatMap(p, h, d), Eigen::Map<Eigen::VectorXd>(p + h * d, h),
            MatMap(p + h * d + h, k, h), Eigen::Map<Eigen::VectorXd>(p + h * d + h + k * h, k)};
  }

  ConstMatMap w1(const ParameterVector& w) const {
    return {w.data(), static_cast<Eigen::Index>(h_), static_cast<Eigen::Index>(d_)};
  }
  Eigen::VectorXd::ConstSegmentReturnType b1(const ParameterVector& w) const {
    return w.segment(static_cast<Eigen::Index>(h_ * d_), static_cast<Eigen::Index>(h_));
  }
  ConstMatMap w2(const ParameterVector& w) const {
    return {w.data() + h_ * d_ + h_, static_cast<Eigen::Index>(k_), static_cast<Eigen::Index>(h_)};
  }
  Eigen::VectorXd::ConstSegmentReturnType b2(const ParameterVector& w) const { return w.tail(static_cast<Eigen::Index>(k_)); }

  Eigen::VectorXd hidden_activations(const ParameterVector& w, ConstRowRef x) const {
    Eigen::VectorXd a = w1(w) * x.transpose() + b1(w);
    for (auto& v : a) v = loss::sigmoid(v);
    return a;
  }

  std::size_t class_index(double y) const {
    if (y < 0 || y >= static_cast<double>(k_) || y != std::floor(y))
      throw ArgumentError("MlpModel: label is not a class index below " + std::to_string(k_));
    return static_cast<std::size_t>(y);
  }

  void check(const ParameterVector& w, ConstRowRef x) const {
    detail::check_dims(static_cast<std::size_t>(w.size()), param_count(),
                       static_cast<std::size_t>(x.size()), d_);
  }

  void check_loss(LossSpec spec) const {
    if (!supports(spec)) throw ArgumentError("MlpModel: only cross-entropy is supported");
  }

  std::size_t d_, h_, k_;
};

static_assert(PredictionModel<LinearModel>);
static_assert(PredictionModel<MlpModel>);

template <PredictionModel Model>
Eigen::VectorXd predict(const Model& model, const ParameterVector& w, ConstRowRef x) {
  return model.predict(w, x);
}

/// Exact gradient of l(w, z) with respect to w.
template <PredictionModel Model>
ParameterVector loss_gradient(const Model& model, const ParameterVector& w, const Instance& z,
                              LossSpec loss) {
  ParameterVector grad = ParameterVector::Zero(static_cast<Eigen::Index>(model.param_count()));
  model.accumulate_loss_gradient(w, z.features.transpose(), z.label, loss, 1.0, grad);
  return grad;
}

// Checkpoint format: a header line "rerm-params v1 <architecture> p=<count>"
// followed by one value per line in shortest round-trip form.

template <PredictionModel Model>
void write_parameters(std::ostream& out, const Model& model, const ParameterVector& w) {
  if (static_cast<std::size_t>(w.size()) != model.param_count())
    throw ArgumentError("write_parameters: length does not match model");
  out << "rerm-params v1 " << model.architecture() << " p=" << w.size() << '\n';
  for (Eigen::Index i = 0; i < w.size(); ++i) out << fmt::format("{}\n", w[i]);
}

template <PredictionModel Model>
ParameterVector read_parameters(std::istream& in, const Model& model) {
  std::string header;
  if (!std::getline(in, header)) throw ParseError(1, "missing parameter header");
  const std::string expected =
      "rerm-params v1 " + model.architecture() + " p=" + std::to_string(model.param_count());
  if (header != expected) throw ParseError(1, "header '" + header + "' does not match '" + expected + "'");
  ParameterVector w(static_cast<Eigen::Index>(model.param_count()));
  std::string line;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    if (!std::getline(in, line)) throw ParseError(static_cast<std::size_t>(i) + 2, "truncated parameters");
    w[i] = detail::parse_double(line, static_cast<std::size_t>(i) + 2, "parameter");
  }
  return w;
}

}  // namespace rerm
