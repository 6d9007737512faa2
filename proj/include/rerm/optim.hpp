#pragma once

// GD, SGD and SVRG with data-pass accounting and evaluation traces.
//
// Data passes count per-instance gradient evaluations divided by n: a full
// gradient costs 1, an SGD step 1/n, and an SVRG inner step 2/n (the anchor
// component gradient is recomputed, not cached). Evaluation work done only
// to fill the trace is not counted.

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "rerm/data.hpp"
#include "rerm/error.hpp"
#include "rerm/model.hpp"
#include "rerm/objective.hpp"
#include "rerm/rng.hpp"

namespace rerm {

/// The subset of Objective the optimizers use. Test doubles can wrap an
/// Objective to count gradient evaluations.
template <class O>
concept TrainableObjective = requires(const O& o, const ParameterVector& w, std::size_t i,
                                      double s, ParameterVector& g, const Dataset& other) {
  { o.size() } -> std::convertible_to<std::size_t>;
  { o.param_count() } -> std::convertible_to<std::size_t>;
  { o.instance_weight() } -> std::convertible_to<double>;
  { o.add_instance_gradient(w, i, s, g) } -> std::convertible_to<double>;
  o.add_penalty_gradient(w, s, g);
  { o.full_gradient(w) } -> std::convertible_to<ParameterVector>;
  { o.empirical_risk(w) } -> std::convertible_to<double>;
  { o.empirical_risk(w, other) } -> std::convertible_to<double>;
  { o.penalty(w) } -> std::convertible_to<double>;
  { o.regularized_gap(w, w) } -> std::convertible_to<double>;
};

struct StepSchedule {
  enum class Kind { constant, inverse, inverse_sqrt };

  Kind kind = Kind::constant;
  double coefficient = 0.0;
  double offset = 0.0;  // inverse only: eta_t = c / (t + offset)

  static StepSchedule constant(double eta) { return make(Kind::constant, eta, 0.0); }
  static StepSchedule inverse(double c, double offset = 0.0) { return make(Kind::inverse, c, offset); }
  static StepSchedule inverse_sqrt(double c) { return make(Kind::inverse_sqrt, c, 0.0); }

  /// Step size for iteration t >= 1.
  double at(std::size_t t) const {
    const auto tt = static_cast<double>(t);
    switch (kind) {
      case Kind::constant: return coefficient;
      case Kind::inverse: return coefficient / (tt + offset);
      case Kind::inverse_sqrt: return coefficient / std::sqrt(tt);
    }
    return coefficient;
  }

  std::string describe() const {
    switch (kind) {
      case Kind::constant: return fmt::format("constant({})", coefficient);
      case Kind::inverse:
        return offset == 0.0 ? fmt::format("{}/t", coefficient)
                             : fmt::format("{}/(t+{})", coefficient, offset);
      case Kind::inverse_sqrt: return fmt::format("{}/sqrt(t)", coefficient);
    }
    return "?";
  }

 private:
  static StepSchedule make(Kind kind, double c, double offset) {
    if (!(c > 0.0) || !std::isfinite(c)) throw ArgumentError("StepSchedule: coefficient must be > 0");
    if (!(offset >= 0.0)) throw ArgumentError("StepSchedule: offset must be >= 0");
    return {kind, c, offset};
  }
};

/// One evaluation point. Columns that need a reference or a test set are NaN
/// when those are absent.
struct TraceRecord {
  std::size_t iteration = 0;
  std::size_t stage = 0;
  double data_passes = 0.0;
  double train_risk = 0.0;
  double test_risk = std::numeric_limits<double>::quiet_NaN();
  double reg_risk = 0.0;
  double grad_norm_sq = 0.0;
  double reg_gap = std::numeric_limits<double>::quiet_NaN();
  double train_gap = std::numeric_limits<double>::quiet_NaN();
  double dist_sq_to_reference = std::numeric_limits<double>::quiet_NaN();
  double wall_time = 0.0;  // seconds since the run started; not written to CSV
};

struct Trace {
  std::string algorithm;
  std::string schedule;
  std::uint64_t seed = 0;
  std::size_t n = 0;
  std::size_t gradient_evaluations = 0;
  double wall_time = 0.0;
  std::vector<TraceRecord> records;
  ParameterVector final_w;

  const TraceRecord& last() const { return records.back(); }
};

struct EvalOptions {
  std::size_t eval_every = 0;  // 0: algorithm default
  const Dataset* test_set = nullptr;
  std::optional<ParameterVector> reference;
};

enum class SvrgOutput { last, random };

namespace detail {

template <TrainableObjective Obj>
class Recorder {
 public:
  Recorder(const Obj& obj, const EvalOptions& opts, std::string algorithm, std::string step)
      : obj_(obj), opts_(opts), algorithm_(std::move(algorithm)), step_(std::move(step)),
        start_(std::chrono::steady_clock::now()) {
    if (opts_.reference) {
      if (static_cast<std::size_t>(opts_.reference->size()) != obj_.param_count())
        throw ArgumentError("EvalOptions: reference has the wrong length");
      reference_train_ = obj_.empirical_risk(*opts_.reference);
    }
  }

  void record(Trace& trace, const ParameterVector& w, std::size_t iteration, std::size_t stage,
              std::size_t evaluations) {
    TraceRecord r;
    r.iteration = iteration;
    r.stage = stage;
    r.data_passes = static_cast<double>(evaluations) / static_cast<double>(obj_.size());
    if (!w.allFinite()) diverged(iteration, "non-finite parameters");
    r.train_risk = obj_.empirical_risk(w);
    r.reg_risk = r.train_risk + obj_.penalty(w);
    if (!std::isfinite(r.reg_risk)) diverged(iteration, "non-finite risk");
    if (trace.records.empty()) {
      initial_ = r.reg_risk;
    } else if (initial_ > 0.0 && r.reg_risk > 1e6 * initial_) {
      diverged(iteration, fmt::format("regularized risk {} exceeds 1e6 x initial {}", r.reg_risk, initial_));
    }
    r.grad_norm_sq = obj_.full_gradient(w).squaredNorm();
    if (opts_.test_set) r.test_risk = obj_.empirical_risk(w, *opts_.test_set);
    if (opts_.reference) {
      r.reg_gap = obj_.regularized_gap(w, *opts_.reference);
      r.train_gap = r.train_risk - reference_train_;
      r.dist_sq_to_reference = (w - *opts_.reference).squaredNorm();
    }
    r.wall_time = elapsed();
    trace.records.push_back(r);
  }

  double elapsed() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  [[noreturn]] void diverged(std::size_t iteration, const std::string& why) const {
    throw DivergenceError(fmt::format("{} diverged at iteration {} with step {}: {}", algorithm_,
                                      iteration, step_, why));
  }

  const Obj& obj_;
  const EvalOptions& opts_;
  std::string algorithm_, step_;
  std::chrono::steady_clock::time_point start_;
  double initial_ = 0.0;
  double reference_train_ = 0.0;
};

inline Trace start_trace(std::string algorithm, std::string schedule, std::uint64_t seed, std::size_t n) {
  Trace t;
  t.algorithm = std::move(algorithm);
  t.schedule = std::move(schedule);
  t.seed = seed;
  t.n = n;
  return t;
}

template <TrainableObjective Obj>
void check_start(const Obj& obj, const ParameterVector& w0) {
  if (static_cast<std::size_t>(w0.size()) != obj.param_count())
    throw ArgumentError("optimizer: w0 has length " + std::to_string(w0.size()) + ", expected " +
                        std::to_string(obj.param_count()));
}

}  // namespace detail

/// w_{t+1} = w_t - eta grad R_S^r(w_t). Records every eval_every iterations
/// (default 1) and at T.
template <TrainableObjective Obj>
Trace run_gd(const Obj& obj, const ParameterVector& w0, double eta, std::size_t iterations,
             const EvalOptions& eval = {}) {
  if (!(eta > 0.0)) throw ArgumentError("run_gd: eta must be > 0");
  detail::check_start(obj, w0);
  const std::size_t every = eval.eval_every ? eval.eval_every : 1;
  Trace trace = detail::start_trace("gd", StepSchedule::constant(eta).describe(), 0, obj.size());
  detail::Recorder rec(obj, eval, "gd", trace.schedule);
  ParameterVector w = w0;
  std::size_t evals = 0;
  rec.record(trace, w, 0, 0, evals);
  for (std::size_t t = 1; t <= iterations; ++t) {
    w -= eta * obj.full_gradient(w);
    evals += obj.size();
    if (t % every == 0 || t == iterations) rec.record(trace, w, t, 0, evals);
  }
  trace.gradient_evaluations = evals;
  trace.final_w = std::move(w);
  trace.wall_time = rec.elapsed();
  return trace;
}

/// w_{t+1} = w_t - eta_t (grad l(w_t, z_i) + lambda grad N(w_t)), i uniform
/// with replacement. Records every eval_every steps (default n) and at T.
template <TrainableObjective Obj>
Trace run_sgd(const Obj& obj, const ParameterVector& w0, const StepSchedule& schedule,
              std::size_t iterations, std::uint64_t seed, const EvalOptions& eval = {}) {
  detail::check_start(obj, w0);
  const std::size_t n = obj.size();
  const std::size_t every = eval.eval_every ? eval.eval_every : n;
  Trace trace = detail::start_trace("sgd", schedule.describe(), seed, n);
  detail::Recorder rec(obj, eval, "sgd", trace.schedule);
  Rng rng(seed);
  const double weight = obj.instance_weight();
  ParameterVector w = w0;
  ParameterVector grad(w.size());
  std::size_t evals = 0;
  rec.record(trace, w, 0, 0, evals);
  for (std::size_t t = 1; t <= iterations; ++t) {
    const std::size_t i = rng.index(n);
    grad.setZero();
    obj.add_instance_gradient(w, i, weight, grad);
    obj.add_penalty_gradient(w, 1.0, grad);
    w -= schedule.at(t) * grad;
    ++evals;
    if (t % every == 0 || t == iterations) rec.record(trace, w, t, 0, evals);
  }
  trace.gradient_evaluations = evals;
  trace.final_w = std::move(w);
  trace.wall_time = rec.elapsed();
  return trace;
}

/// Variance-reduced direction for instance i:
///   v = grad R_S^r(anchor) + [grad l_i(w) - grad l_i(anchor)] + lambda [grad N(w) - grad N(anchor)].
/// The correction is formed before it is added, so v equals the anchor
/// gradient bit-for-bit when w == anchor.
template <TrainableObjective Obj>
ParameterVector svrg_direction(const Obj& obj, const ParameterVector& w, const ParameterVector& anchor,
                               const ParameterVector& anchor_gradient, std::size_t i) {
  ParameterVector at_w = ParameterVector::Zero(w.size());
  ParameterVector at_anchor = ParameterVector::Zero(w.size());
  obj.add_instance_gradient(w, i, obj.instance_weight(), at_w);
  obj.add_penalty_gradient(w, 1.0, at_w);
  obj.add_instance_gradient(anchor, i, obj.instance_weight(), at_anchor);
  obj.add_penalty_gradient(anchor, 1.0, at_anchor);
  return anchor_gradient + (at_w - at_anchor);
}

/// SVRG: each stage takes a full gradient at the anchor, then inner_m steps
/// along svrg_direction with the same sampled index for both component
/// gradients. The stage output (last inner iterate, or a uniformly drawn one)
/// becomes the next anchor. Records every eval_every inner steps (default
/// n/2, i.e. one data pass of inner work) and at every stage end.
template <TrainableObjective Obj>
Trace run_svrg(const Obj& obj, const ParameterVector& w0, double eta, std::size_t inner_m,
               std::size_t stages, std::uint64_t seed, const EvalOptions& eval = {},
               SvrgOutput output = SvrgOutput::last) {
  if (!(eta > 0.0)) throw ArgumentError("run_svrg: eta must be > 0");
  if (inner_m < 1) throw ArgumentError("run_svrg: inner_m must be >= 1");
  detail::check_start(obj, w0);
  const std::size_t n = obj.size();
  const std::size_t every = eval.eval_every ? eval.eval_every : std::max<std::size_t>(1, n / 2);
  Trace trace = detail::start_trace("svrg", StepSchedule::constant(eta).describe(), seed, n);
  detail::Recorder rec(obj, eval, "svrg", trace.schedule);
  Rng rng(seed);
  const double weight = obj.instance_weight();
  ParameterVector anchor = w0;
  ParameterVector w = w0;
  ParameterVector at_w(w.size()), at_anchor(w.size()), chosen(w.size());
  std::size_t evals = 0, step = 0;
  rec.record(trace, anchor, 0, 0, evals);
  for (std::size_t s = 1; s <= stages; ++s) {
    const ParameterVector anchor_gradient = obj.full_gradient(anchor);
    evals += n;
    w = anchor;
    const std::size_t pick = output == SvrgOutput::random ? rng.index(inner_m) + 1 : inner_m;
    for (std::size_t k = 1; k <= inner_m; ++k) {
      const std::size_t i = rng.index(n);
      at_w.setZero();
      at_anchor.setZero();
      obj.add_instance_gradient(w, i, weight, at_w);
      obj.add_penalty_gradient(w, 1.0, at_w);
      obj.add_instance_gradient(anchor, i, weight, at_anchor);
      obj.add_penalty_gradient(anchor, 1.0, at_anchor);
      w -= eta * (anchor_gradient + (at_w - at_anchor));
      evals += 2;
      ++step;
      if (k == pick) chosen = w;
      if (k % every == 0 && k != inner_m) rec.record(trace, w, step, s, evals);
    }
    anchor = chosen;
    rec.record(trace, anchor, step, s, evals);
  }
  trace.gradient_evaluations = evals;
  trace.final_w = std::move(anchor);
  trace.wall_time = rec.elapsed();
  return trace;
}

// ---------------------------------------------------------------------------
// CSV: one row per evaluation point. Column order is fixed:
//   iteration,stage,data_passes,train_risk,test_risk,reg_risk,grad_norm_sq,
//   reg_gap,train_gap,dist_sq_to_reference
// Reals are written in shortest round-trip form; missing values as "nan".

inline constexpr const char* kTraceCsvHeader =
    "iteration,stage,data_passes,train_risk,test_risk,reg_risk,grad_norm_sq,reg_gap,train_gap,"
    "dist_sq_to_reference";

inline void write_trace_csv(const Trace& trace, std::ostream& out) {
  out << kTraceCsvHeader << '\n';
  for (const auto& r : trace.records) {
    out << fmt::format("{},{},{},{},{},{},{},{},{},{}\n", r.iteration, r.stage, r.data_passes,
                       r.train_risk, r.test_risk, r.reg_risk, r.grad_norm_sq, r.reg_gap,
                       r.train_gap, r.dist_sq_to_reference);
  }
}

inline std::vector<TraceRecord> read_trace_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kTraceCsvHeader)
    throw ParseError(1, "unexpected trace CSV header");
  std::vector<TraceRecord> records;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 10) throw ParseError(line_no, "expected 10 columns");
    auto real = [&](std::size_t k) {
      if (cells[k] == "nan") return std::numeric_limits<double>::quiet_NaN();
      return detail::parse_double(cells[k], line_no, "value");
    };
    TraceRecord r;
    r.iteration = static_cast<std::size_t>(real(0));
    r.stage = static_cast<std::size_t>(real(1));
    r.data_passes = real(2);
    r.train_risk = real(3);
    r.test_risk = real(4);
    r.reg_risk = real(5);
    r.grad_norm_sq = real(6);
    r.reg_gap = real(7);
    r.train_gap = real(8);
    r.dist_sq_to_reference = real(9);
    records.push_back(r);
  }
  return records;
}

}  // namespace rerm
