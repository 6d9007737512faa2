#pragma once

// Experiment orchestration: JSON configs, multi-seed sweeps, artifact files
// and the passes-to-threshold comparison table.
//
// Artifact layout under the output directory:
//   config.json                  resolved configuration
//   <label>_seed<k>.csv          trace (see kTraceCsvHeader)
//   <label>_seed<k>.json         run metadata
//   <label>_seed<k>.timing.json  wall-clock times (the only nondeterministic files)
//   bounds/<label>_<kind>.json   bound reports
//   compare.csv                  passes to each threshold, median over seeds
//   summary.json                 index of all of the above plus the comparison

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "rerm/bounds.hpp"
#include "rerm/data.hpp"
#include "rerm/error.hpp"
#include "rerm/model.hpp"
#include "rerm/objective.hpp"
#include "rerm/optim.hpp"
#include "rerm/oracles.hpp"
#include "rerm/rng.hpp"

namespace rerm {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

enum class TaskType { linreg, logreg, mlp };

inline std::string to_string(TaskType t) {
  switch (t) {
    case TaskType::linreg: return "linreg";
    case TaskType::logreg: return "logreg";
    case TaskType::mlp: return "mlp";
  }
  return "?";
}

struct DataConfig {
  std::string source = "synthetic";  // synthetic | libsvm
  std::string path;                  // libsvm file, relative to the config file
  std::size_t n = 4000;              // total instances before the split
  std::size_t d = 100;
  double noise_sd = 0.1;
  double sharpness = 4.0;   // logreg: scale of the true margin
  double separation = 3.0;  // mlp: per-coordinate scale of the class means
  std::size_t classes = 10;
  double train_fraction = 0.5;
  std::uint64_t seed = 1;
};

struct AlgorithmConfig {
  Algorithm kind = Algorithm::gd;
  std::string label;
  std::optional<double> step;              // gd/svrg; nullopt = auto
  bool component_step = false;             // gd/svrg: eta = 1 / mean per-instance smoothness
  std::optional<StepSchedule> schedule;    // sgd; nullopt = auto
  std::string inner = "2n";                // svrg: "<k>n" or an integer
  SvrgOutput output = SvrgOutput::last;
};

struct ThresholdConfig {
  bool relative = true;
  std::vector<double> values;  // empty: decades 1e-1 .. 1e-8
};

struct NonconvexInputs {
  double beta0 = 0.0, L = 0.0, mu = 0.0, gamma = 0.0, epsilon0 = 0.0, local_gap = 0.0;
};

struct BoundsConfig {
  bool expected = false;
  bool high_prob = false;
  double delta = 0.1;
  std::optional<NonconvexInputs> nonconvex;
};

struct ExperimentConfig {
  std::string name = "experiment";
  TaskType task = TaskType::linreg;
  DataConfig data;
  std::optional<double> lambda;  // nullopt: 1/sqrt(n_train)
  std::size_t hidden = 100;
  std::vector<AlgorithmConfig> algorithms;
  std::optional<double> budget_passes;
  std::optional<std::size_t> iterations;  // gd iterations, sgd steps, svrg stages
  std::vector<std::uint64_t> seeds;
  std::size_t evals_per_pass = 4;
  ThresholdConfig thresholds;
  BoundsConfig bounds;
  std::string output_dir = "artifacts";
  fs::path base_dir;  // directory that relative data paths resolve against
  json source;        // the configuration as given, for config.json
};

namespace detail {

/// Reads one JSON object, tracking the key path for error messages and
/// rejecting keys nobody asked for.
class ConfigReader {
 public:
  ConfigReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail("", "expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const json& at(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) fail(key, "missing");
    return j_.at(key);
  }

  template <class T>
  T get(const std::string& key, T fallback) {
    if (!has(key)) return fallback;
    return as<T>(key);
  }

  template <class T>
  T as(const std::string& key) {
    const json& v = at(key);
    try {
      return v.get<T>();
    } catch (const json::exception&) {
      fail(key, "has the wrong type");
    }
  }

  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  [[noreturn]] void fail(const std::string& key, const std::string& why) const {
    throw ArgumentError(fmt::format("config: {} {}", key.empty() ? (path_.empty() ? "<root>" : path_)
                                                                  : child(key), why));
  }

  void finish() const {
    for (const auto& [key, _] : j_.items())
      if (!seen_.count(key)) fail(key, "is not a recognized key");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline StepSchedule parse_schedule(const json& j, const std::string& path) {
  ConfigReader r(j, path);
  const auto kind = r.as<std::string>("kind");
  const auto c = r.as<double>("c");
  StepSchedule s;
  if (kind == "constant") {
    s = StepSchedule::constant(c);
  } else if (kind == "inverse") {
    s = StepSchedule::inverse(c, r.get<double>("offset", 0.0));
  } else if (kind == "inverse_sqrt") {
    s = StepSchedule::inverse_sqrt(c);
  } else {
    r.fail("kind", "must be constant, inverse or inverse_sqrt");
  }
  r.finish();
  return s;
}

inline std::size_t resolve_inner(const std::string& rule, std::size_t n) {
  try {
    std::size_t used = 0;
    if (!rule.empty() && rule.back() == 'n') {
      const double k = rule.size() == 1 ? 1.0 : std::stod(rule.substr(0, rule.size() - 1), &used);
      if (rule.size() > 1 && used != rule.size() - 1) throw std::invalid_argument(rule);
      if (k > 0.0) return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(k * static_cast<double>(n))));
    } else {
      const auto m = std::stoull(rule, &used);
      if (used == rule.size() && m > 0) return m;
    }
  } catch (const std::exception&) {
  }
  throw ArgumentError("config: svrg inner \"" + rule + "\" must be a positive integer or \"<k>n\"");
}

inline AlgorithmConfig parse_algorithm(const json& j, const std::string& path) {
  ConfigReader r(j, path);
  AlgorithmConfig a;
  const auto name = r.as<std::string>("name");
  if (name == "gd") a.kind = Algorithm::gd;
  else if (name == "sgd") a.kind = Algorithm::sgd;
  else if (name == "svrg") a.kind = Algorithm::svrg;
  else r.fail("name", "must be gd, sgd or svrg");
  a.label = r.get<std::string>("label", name);
  if (a.label.empty() || a.label.find_first_of("/\\ ") != std::string::npos)
    r.fail("label", "must be a non-empty file-name-safe string");
  if (a.kind == Algorithm::sgd) {
    if (r.has("schedule")) {
      const json& s = r.at("schedule");
      if (!(s.is_string() && s.get<std::string>() == "auto")) a.schedule = parse_schedule(s, r.child("schedule"));
    }
  } else if (r.has("step")) {
    const json& s = r.at("step");
    if (s.is_number()) {
      a.step = s.get<double>();
      if (!(*a.step > 0.0)) r.fail("step", "must be > 0");
    } else if (s.is_string() && s.get<std::string>() == "component") {
      a.component_step = true;
    } else if (!(s.is_string() && s.get<std::string>() == "auto")) {
      r.fail("step", "must be a positive number, \"auto\" or \"component\"");
    }
  }
  if (a.kind == Algorithm::svrg) {
    if (r.has("inner")) {
      const json& m = r.at("inner");
      if (m.is_number_unsigned()) a.inner = std::to_string(m.get<std::size_t>());
      else if (m.is_string()) a.inner = m.get<std::string>();
      else r.fail("inner", "must be an integer or a string like \"2n\"");
      try {
        resolve_inner(a.inner, 1);
      } catch (const ArgumentError&) {
        r.fail("inner", "must be a positive integer or \"<k>n\"");
      }
    }
    const auto out = r.get<std::string>("output", "last");
    if (out == "last") a.output = SvrgOutput::last;
    else if (out == "random") a.output = SvrgOutput::random;
    else r.fail("output", "must be last or random");
  }
  r.finish();
  return a;
}


}  // namespace detail

/// Parses a configuration. `paper_scale` applies the config's "paper_scale"
/// block as a JSON merge patch before reading.
inline ExperimentConfig parse_config(json j, const fs::path& base_dir = ".", bool paper_scale = false) {
  if (!j.is_object()) throw ArgumentError("config: top level must be an object");
  json patch;
  if (j.contains("paper_scale")) {
    patch = j.at("paper_scale");
    j.erase("paper_scale");
  }
  if (paper_scale) {
    if (patch.is_null()) throw ArgumentError("config: --paper-scale requested but the config has no paper_scale block");
    j.merge_patch(patch);
  }

  ExperimentConfig c;
  c.source = j;
  c.base_dir = base_dir;
  detail::ConfigReader r(j, "");
  c.name = r.get<std::string>("name", c.name);
  const auto task = r.as<std::string>("task");
  if (task == "linreg") c.task = TaskType::linreg;
  else if (task == "logreg") c.task = TaskType::logreg;
  else if (task == "mlp") c.task = TaskType::mlp;
  else r.fail("task", "must be linreg, logreg or mlp");

  {
    detail::ConfigReader d(r.at("data"), "data");
    auto& dc = c.data;
    dc.source = d.get<std::string>("source", dc.source);
    if (dc.source == "libsvm") {
      dc.path = d.as<std::string>("path");
    } else if (dc.source != "synthetic") {
      d.fail("source", "must be synthetic or libsvm");
    }
    dc.n = d.get<std::size_t>("n", dc.n);
    dc.d = d.get<std::size_t>("d", dc.d);
    dc.noise_sd = d.get<double>("noise_sd", dc.noise_sd);
    dc.sharpness = d.get<double>("sharpness", dc.sharpness);
    dc.separation = d.get<double>("separation", dc.separation);
    dc.classes = d.get<std::size_t>("classes", dc.classes);
    dc.train_fraction = d.get<double>("train_fraction", dc.train_fraction);
    dc.seed = d.get<std::uint64_t>("seed", dc.seed);
    if (!(dc.train_fraction > 0.0 && dc.train_fraction < 1.0)) d.fail("train_fraction", "must lie in (0, 1)");
    if (dc.source == "synthetic" && (dc.n < 2 || dc.d == 0)) d.fail("n", "and d must be positive (n >= 2)");
    d.finish();
  }

  if (r.has("lambda")) {
    const json& l = r.at("lambda");
    if (l.is_number()) {
      c.lambda = l.get<double>();
      if (!(*c.lambda >= 0.0)) r.fail("lambda", "must be >= 0");
    } else if (!(l.is_string() && l.get<std::string>() == "inv_sqrt_n")) {
      r.fail("lambda", "must be a number or \"inv_sqrt_n\"");
    }
  }
  c.hidden = r.get<std::size_t>("hidden", c.hidden);

  const json& algs = r.at("algorithms");
  if (!algs.is_array() || algs.empty()) r.fail("algorithms", "must be a non-empty array");
  std::set<std::string> labels;
  for (std::size_t i = 0; i < algs.size(); ++i) {
    c.algorithms.push_back(detail::parse_algorithm(algs[i], fmt::format("algorithms[{}]", i)));
    if (!labels.insert(c.algorithms.back().label).second)
      r.fail("algorithms", "has duplicate label " + c.algorithms.back().label);
    if (c.task == TaskType::mlp && !c.algorithms.back().step && !c.algorithms.back().schedule)
      r.fail("algorithms", "needs explicit step sizes for the mlp task (no certified constants)");
  }

  if (r.has("budget_passes") == r.has("iterations"))
    r.fail("budget_passes", "or iterations must be given (exactly one)");
  if (r.has("budget_passes")) {
    c.budget_passes = r.as<double>("budget_passes");
    if (!(*c.budget_passes > 0.0)) r.fail("budget_passes", "must be > 0");
  } else {
    c.iterations = r.as<std::size_t>("iterations");
  }

  c.seeds = r.as<std::vector<std::uint64_t>>("seeds");
  if (c.seeds.empty()) r.fail("seeds", "must list at least one seed");
  if (std::set<std::uint64_t>(c.seeds.begin(), c.seeds.end()).size() != c.seeds.size())
    r.fail("seeds", "must be distinct");
  c.evals_per_pass = r.get<std::size_t>("evals_per_pass", c.evals_per_pass);
  if (c.evals_per_pass == 0) r.fail("evals_per_pass", "must be >= 1");

  if (r.has("thresholds")) {
    detail::ConfigReader t(r.at("thresholds"), "thresholds");
    const auto mode = t.get<std::string>("mode", "relative");
    if (mode != "relative" && mode != "absolute") t.fail("mode", "must be relative or absolute");
    c.thresholds.relative = mode == "relative";
    c.thresholds.values = t.get<std::vector<double>>("values", {});
    for (double v : c.thresholds.values)
      if (!(v > 0.0)) t.fail("values", "must all be > 0");
    t.finish();
  }

  if (r.has("bounds")) {
    detail::ConfigReader b(r.at("bounds"), "bounds");
    c.bounds.expected = b.get<bool>("expected", false);
    c.bounds.high_prob = b.get<bool>("high_prob", false);
    c.bounds.delta = b.get<double>("delta", c.bounds.delta);
    if (!(c.bounds.delta > 0.0 && c.bounds.delta < 1.0)) b.fail("delta", "must lie in (0, 1)");
    if (b.has("nonconvex")) {
      detail::ConfigReader nc(b.at("nonconvex"), "bounds.nonconvex");
      NonconvexInputs in;
      in.beta0 = nc.as<double>("beta0");
      in.L = nc.as<double>("L");
      in.mu = nc.as<double>("mu");
      in.gamma = nc.as<double>("gamma");
      in.epsilon0 = nc.as<double>("epsilon0");
      in.local_gap = nc.as<double>("local_gap");
      nc.finish();
      c.bounds.nonconvex = in;
    }
    b.finish();
    if (c.task == TaskType::mlp && (c.bounds.expected || c.bounds.high_prob))
      b.fail("expected", "and high_prob need certified constants; use nonconvex for the mlp task");
  }
  c.output_dir = r.get<std::string>("output_dir", c.output_dir);
  r.finish();
  return c;
}

inline ExperimentConfig load_config(const fs::path& path, bool paper_scale = false) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("config: cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ArgumentError(fmt::format("config: {} is not valid JSON: {}", path.string(), e.what()));
  }
  return parse_config(std::move(j), path.parent_path().empty() ? fs::path(".") : path.parent_path(), paper_scale);
}

// ---------------------------------------------------------------------------
// Thresholds and the comparison table

/// What a threshold is compared against: `metric` is reg_gap (convex) or
/// train_risk (mlp), divided by its value at the first record when relative.
struct ThresholdSpec {
  std::string metric = "reg_gap";
  bool relative = true;
  std::vector<double> values;

  static std::vector<double> decades() { return {1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8}; }
};

inline double metric_value(const TraceRecord& r, const std::string& metric) {
  if (metric == "reg_gap") return r.reg_gap;
  if (metric == "train_risk") return r.train_risk;
  if (metric == "reg_risk") return r.reg_risk;
  throw ArgumentError("threshold metric must be reg_gap, train_risk or reg_risk");
}

/// Data passes at the first record whose metric is at or below `threshold`.
inline std::optional<double> passes_to_threshold(const std::vector<TraceRecord>& records,
                                                 const ThresholdSpec& spec, double threshold) {
  if (records.empty()) return std::nullopt;
  const double scale = spec.relative ? metric_value(records.front(), spec.metric) : 1.0;
  for (const auto& r : records) {
    const double v = metric_value(r, spec.metric);
    if (std::isnan(v)) throw ArgumentError("passes_to_threshold: trace has no " + spec.metric + " column values");
    if (scale <= 0.0 ? v <= 0.0 : v / scale <= threshold) return r.data_passes;
  }
  return std::nullopt;
}

struct AlgorithmRuns {
  std::string label;
  std::vector<std::vector<TraceRecord>> seeds;
};

struct CompareRow {
  double threshold = 0.0;
  std::vector<std::optional<double>> passes;  // median over seeds, per algorithm
};

struct SpeedupRatio {
  double threshold;
  std::string numerator, denominator;
  double ratio;
};

struct CompareReport {
  ThresholdSpec spec;
  std::vector<std::string> algorithms;
  std::vector<CompareRow> rows;  // loosest threshold first
  std::vector<SpeedupRatio> ratios;
  std::vector<std::string> early_order;  // by passes at the loosest threshold, reached only
  std::optional<double> tightest_common;
  std::vector<std::string> late_order;  // by passes at the tightest common threshold

  std::string early_winner() const { return early_order.empty() ? "not reached" : early_order.front(); }
  std::string late_winner() const { return late_order.empty() ? "not reached" : late_order.front(); }

  std::optional<double> passes(const std::string& algorithm, double threshold) const {
    const auto a = std::find(algorithms.begin(), algorithms.end(), algorithm);
    if (a == algorithms.end()) throw ArgumentError("compare report has no algorithm " + algorithm);
    for (const auto& row : rows)
      if (row.threshold == threshold) return row.passes[static_cast<std::size_t>(a - algorithms.begin())];
    throw ArgumentError(fmt::format("compare report has no threshold {}", threshold));
  }
};

namespace detail {
// Median with unreached seeds counted as +inf; an infinite median is "not reached".
inline std::optional<double> median_passes(std::vector<double> v) {
  if (v.empty()) return std::nullopt;
  std::sort(v.begin(), v.end());
  const std::size_t k = v.size() / 2;
  const double m = v.size() % 2 ? v[k] : 0.5 * (v[k - 1] + v[k]);
  if (!std::isfinite(m)) return std::nullopt;
  return m;
}

inline std::vector<std::string> order_by(const std::vector<std::string>& names,
                                         const std::vector<std::optional<double>>& passes) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < names.size(); ++i)
    if (passes[i]) idx.push_back(i);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return *passes[a] < *passes[b]; });
  std::vector<std::string> out;
  for (auto i : idx) out.push_back(names[i]);
  return out;
}
}  // namespace detail

inline CompareReport compare_report(const std::vector<AlgorithmRuns>& runs, ThresholdSpec spec) {
  if (runs.size() < 2) throw ArgumentError("compare_report: needs at least 2 algorithms");
  if (spec.values.empty()) spec.values = ThresholdSpec::decades();
  std::sort(spec.values.begin(), spec.values.end(), std::greater<>());
  spec.values.erase(std::unique(spec.values.begin(), spec.values.end()), spec.values.end());

  CompareReport rep;
  rep.spec = spec;
  for (const auto& a : runs) {
    if (a.seeds.empty()) throw ArgumentError("compare_report: algorithm " + a.label + " has no runs");
    rep.algorithms.push_back(a.label);
  }
  for (double thr : spec.values) {
    CompareRow row{thr, {}};
    for (const auto& a : runs) {
      std::vector<double> per_seed;
      for (const auto& records : a.seeds) {
        const auto p = passes_to_threshold(records, spec, thr);
        per_seed.push_back(p ? *p : std::numeric_limits<double>::infinity());
      }
      row.passes.push_back(detail::median_passes(per_seed));
    }
    for (std::size_t i = 0; i < runs.size(); ++i)
      for (std::size_t j = i + 1; j < runs.size(); ++j)
        if (row.passes[i] && row.passes[j] && *row.passes[j] > 0.0)
          rep.ratios.push_back({thr, rep.algorithms[i], rep.algorithms[j], *row.passes[i] / *row.passes[j]});
    const bool all = std::all_of(row.passes.begin(), row.passes.end(), [](const auto& p) { return p.has_value(); });
    if (all) {
      rep.tightest_common = thr;
      rep.late_order = detail::order_by(rep.algorithms, row.passes);
    }
    rep.rows.push_back(std::move(row));
  }
  rep.early_order = detail::order_by(rep.algorithms, rep.rows.front().passes);
  return rep;
}

inline json to_json(const CompareReport& r) {
  auto cell = [](const std::optional<double>& p) -> json { return p ? json(*p) : json("not reached"); };
  json j;
  j["metric"] = r.spec.metric;
  j["mode"] = r.spec.relative ? "relative" : "absolute";
  j["algorithms"] = r.algorithms;
  json rows = json::array();
  for (const auto& row : r.rows) {
    json passes = json::object();
    for (std::size_t i = 0; i < r.algorithms.size(); ++i) passes[r.algorithms[i]] = cell(row.passes[i]);
    rows.push_back({{"threshold", row.threshold}, {"passes", passes}});
  }
  j["thresholds"] = rows;
  json ratios = json::array();
  for (const auto& s : r.ratios)
    ratios.push_back({{"threshold", s.threshold}, {"numerator", s.numerator}, {"denominator", s.denominator},
                      {"ratio", s.ratio}});
  j["speedup_ratios"] = ratios;
  j["early_winner"] = r.early_winner();
  j["early_order"] = r.early_order;
  j["loosest_threshold"] = r.rows.front().threshold;
  j["tightest_common_threshold"] = r.tightest_common ? json(*r.tightest_common) : json("not reached");
  j["late_winner"] = r.late_winner();
  j["late_order"] = r.late_order;
  return j;
}

inline void write_compare_csv(const CompareReport& r, std::ostream& out) {
  out << "threshold";
  for (const auto& a : r.algorithms) out << ',' << a;
  out << '\n';
  for (const auto& row : r.rows) {
    out << fmt::format("{}", row.threshold);
    for (const auto& p : row.passes) out << ',' << (p ? fmt::format("{}", *p) : std::string("not reached"));
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Running experiments

struct RunRecord {
  std::string label;
  Algorithm algorithm = Algorithm::gd;
  std::uint64_t seed = 0;
  Trace trace;
  std::optional<ConvergenceErrors> errors;
  std::string csv_file, metadata_file, timing_file;
};

struct RunArtifact {
  fs::path dir;
  std::string name;
  TaskType task = TaskType::linreg;
  double lambda = 0.0;
  std::size_t n_train = 0, n_test = 0;
  std::optional<ProblemConstants> constants;
  std::optional<ParameterVector> reference;
  std::vector<RunRecord> runs;
  std::vector<std::string> bound_files;
  std::optional<CompareReport> compare;
  bool complete = false;

  std::vector<const RunRecord*> runs_of(const std::string& label) const {
    std::vector<const RunRecord*> out;
    for (const auto& r : runs)
      if (r.label == label) out.push_back(&r);
    return out;
  }
};

inline json to_json(const ProblemConstants& c) {
  return {{"L", c.L}, {"gamma", c.gamma}, {"gamma_w", c.gamma_w}, {"mu", c.mu}, {"kappa", c.kappa},
          {"kappa_full", c.kappa_full}, {"gamma_instance_mean", c.gamma_instance_mean},
          {"gamma_instance_max", c.gamma_instance_max}, {"K", c.K}, {"M", c.M},
          {"domain_radius", c.domain_radius}};
}

inline json to_json(const ConvergenceErrors& e) {
  return {{"rho0", e.rho0}, {"rho0_raw", e.rho0_raw}, {"rho0_reg", e.rho0_reg}, {"rho1", e.rho1}, {"rho2", e.rho2}};
}

namespace detail {

template <class F>
auto in_stage(const std::string& stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

inline void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

struct Problem {
  Dataset train, test;
};

inline Problem build_data(const ExperimentConfig& c) {
  const auto& dc = c.data;
  Dataset all = [&]() -> Dataset {
    if (dc.source == "libsvm") {
      fs::path p = dc.path;
      if (p.is_relative()) p = c.base_dir / p;
      const LibsvmMode mode = c.task == TaskType::linreg   ? LibsvmMode::regression
                              : c.task == TaskType::logreg ? LibsvmMode::binary
                                                           : LibsvmMode::multiclass;
      return parse_libsvm(p.string(), mode);
    }
    switch (c.task) {
      case TaskType::linreg: return generate_gaussian_regression(dc.n, dc.d, dc.noise_sd, dc.seed).dataset;
      case TaskType::logreg: return generate_logistic_classification(dc.n, dc.d, dc.sharpness, dc.seed);
      case TaskType::mlp: return generate_gaussian_classes(dc.n, dc.d, dc.classes, dc.separation, dc.seed);
    }
    throw ArgumentError("unknown task");
  }();
  auto parts = split(all, dc.train_fraction, dc.seed);
  return {std::move(parts.train), std::move(parts.test)};
}

struct Budget {
  std::size_t iterations = 0;  // gd iterations, sgd steps or svrg stages
  std::size_t inner = 0;
};

inline Budget resolve_budget(const ExperimentConfig& c, const AlgorithmConfig& a, std::size_t n) {
  Budget b;
  if (a.kind == Algorithm::svrg) b.inner = resolve_inner(a.inner, n);
  if (c.iterations) {
    b.iterations = *c.iterations;
    return b;
  }
  const double passes = *c.budget_passes;
  switch (a.kind) {
    case Algorithm::gd: b.iterations = static_cast<std::size_t>(std::ceil(passes)); break;
    case Algorithm::sgd:
      b.iterations = static_cast<std::size_t>(std::llround(passes * static_cast<double>(n)));
      break;
    case Algorithm::svrg: {
      const double per_stage = 1.0 + 2.0 * static_cast<double>(b.inner) / static_cast<double>(n);
      b.iterations = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(passes / per_stage)));
      break;
    }
  }
  return b;
}

inline std::size_t eval_every(const ExperimentConfig& c, Algorithm a, std::size_t n) {
  const std::size_t per_pass = c.evals_per_pass;
  switch (a) {
    case Algorithm::gd: return 1;
    case Algorithm::sgd: return std::max<std::size_t>(1, n / per_pass);
    case Algorithm::svrg: return std::max<std::size_t>(1, n / (2 * per_pass));
  }
  return 1;
}

template <class Model>
Trace run_one(const Objective<Model>& obj, const ParameterVector& w0, const AlgorithmConfig& a,
              const Budget& b, std::uint64_t seed, const std::optional<ProblemConstants>& k,
              const EvalOptions& eval) {
  auto need = [&](const char* what) -> const ProblemConstants& {
    if (!k) throw ArgumentError(fmt::format("{} step \"auto\" needs certified constants", what));
    return *k;
  };
  switch (a.kind) {
    case Algorithm::gd: {
      const double eta = a.step             ? *a.step
                         : a.component_step ? 1.0 / need("gd").gamma_instance_mean
                                            : 1.0 / need("gd").gamma_w;
      return run_gd(obj, w0, eta, b.iterations, eval);
    }
    case Algorithm::sgd: {
      StepSchedule s;
      if (a.schedule) {
        s = *a.schedule;
      } else {
        const auto& c = need("sgd");
        s = StepSchedule::inverse(1.0 / c.mu, c.gamma_instance_max / c.mu);
      }
      return run_sgd(obj, w0, s, b.iterations, seed, eval);
    }
    case Algorithm::svrg: {
      // "auto" and "component" coincide for SVRG.
      const double eta = a.step ? *a.step : 1.0 / need("svrg").gamma_instance_mean;
      return run_svrg(obj, w0, eta, b.inner, b.iterations, seed, eval, a.output);
    }
  }
  throw ArgumentError("unknown algorithm");
}

inline std::string run_stem(const std::string& label, std::uint64_t seed) {
  return fmt::format("{}_seed{}", label, seed);
}

inline ThresholdSpec threshold_spec(const ExperimentConfig& c) {
  ThresholdSpec s;
  s.metric = c.task == TaskType::mlp ? "train_risk" : "reg_gap";
  s.relative = c.thresholds.relative;
  s.values = c.thresholds.values.empty() ? ThresholdSpec::decades() : c.thresholds.values;
  return s;
}

inline json threshold_json(const ThresholdSpec& s) {
  return {{"metric", s.metric}, {"mode", s.relative ? "relative" : "absolute"}, {"values", s.values}};
}

template <class Model>
void run_pipeline(const ExperimentConfig& c, const Problem& prob, Model model, LossSpec loss, RunArtifact& art,
                  json& summary) {
  const fs::path& dir = art.dir;
  const double n = static_cast<double>(prob.train.size());
  art.lambda = c.lambda ? *c.lambda : 1.0 / std::sqrt(n);
  summary["lambda"] = art.lambda;
  const Objective<Model> obj(prob.train, model, loss, art.lambda);
  const bool convex = std::is_same_v<Model, LinearModel>;

  auto initial = [&](std::uint64_t seed) -> ParameterVector {
    if constexpr (std::is_same_v<Model, LinearModel>) {
      (void)seed;
      return obj.model().initial_parameters();
    } else {
      return obj.model().initial_parameters(derive_seed(seed, 2));
    }
  };

  if constexpr (std::is_same_v<Model, LinearModel>) {
    art.constants = in_stage("constants", [&] {
      return estimate_constants(obj, default_domain_radius(obj, initial(0)));
    });
    summary["constants"] = to_json(*art.constants);
    art.reference = in_stage("reference", [&] { return minimize(obj); });
    summary["reference"] = {{"reg_risk", obj.regularized_risk(*art.reference)},
                            {"train_risk", obj.empirical_risk(*art.reference)},
                            {"grad_norm", obj.full_gradient(*art.reference).norm()}};
  }

  json runs = json::array();
  for (const auto& a : c.algorithms) {
    const Budget b = resolve_budget(c, a, prob.train.size());
    for (const auto seed : c.seeds) {
      const std::string stage = fmt::format("optimize[{} seed {}]", a.label, seed);
      RunRecord rec;
      rec.label = a.label;
      rec.algorithm = a.kind;
      rec.seed = seed;
      EvalOptions eval;
      eval.eval_every = eval_every(c, a.kind, prob.train.size());
      eval.test_set = &prob.test;
      eval.reference = art.reference;
      rec.trace = in_stage(stage, [&] {
        return run_one(obj, initial(seed), a, b, derive_seed(seed, 1), art.constants, eval);
      });
      if (convex) rec.errors = in_stage(stage, [&] { return convergence_errors(obj, rec.trace, *art.reference); });

      const std::string stem = run_stem(a.label, seed);
      rec.csv_file = stem + ".csv";
      rec.metadata_file = stem + ".json";
      rec.timing_file = stem + ".timing.json";
      in_stage("artifacts", [&] {
        std::ostringstream csv;
        write_trace_csv(rec.trace, csv);
        write_text(dir / rec.csv_file, csv.str());
        const auto& last = rec.trace.last();
        json meta = {{"experiment", c.name},
                     {"task", to_string(c.task)},
                     {"algorithm", to_string(a.kind)},
                     {"label", a.label},
                     {"schedule", rec.trace.schedule},
                     {"seed", seed},
                     {"n_train", prob.train.size()},
                     {"n_test", prob.test.size()},
                     {"lambda", art.lambda},
                     {"architecture", obj.model().architecture()},
                     {"iterations", b.iterations},
                     {"gradient_evaluations", rec.trace.gradient_evaluations},
                     {"data_passes", last.data_passes},
                     {"final", {{"train_risk", last.train_risk}, {"test_risk", last.test_risk},
                                {"reg_risk", last.reg_risk}, {"grad_norm_sq", last.grad_norm_sq}}},
                     {"trace", rec.csv_file}};
        if (a.kind == Algorithm::svrg) meta["inner_m"] = b.inner;
        if (art.constants) meta["constants"] = to_json(*art.constants);
        if (rec.errors) meta["convergence_errors"] = to_json(*rec.errors);
        write_json(dir / rec.metadata_file, meta);
        write_json(dir / rec.timing_file, {{"wall_time_seconds", rec.trace.wall_time}});
      });
      runs.push_back({{"label", a.label}, {"algorithm", to_string(a.kind)}, {"seed", seed},
                      {"csv", rec.csv_file}, {"metadata", rec.metadata_file}, {"timing", rec.timing_file}});
      art.runs.push_back(std::move(rec));
    }
  }
  summary["runs"] = runs;

  in_stage("bounds", [&] {
    json notes = json::array();
    const bool any = c.bounds.expected || c.bounds.high_prob || c.bounds.nonconvex;
    if (!any) return;
    fs::create_directories(dir / "bounds");
    for (const auto& a : c.algorithms) {
      const auto mine = art.runs_of(a.label);
      const std::string source = fmt::format("{} seed(s)", mine.size());
      auto emit = [&](const BoundReport& rep) {
        const std::string file = fmt::format("bounds/{}_{}.json", a.label, to_string(rep.kind));
        json j = to_json(rep);
        j["algorithm"] = a.label;
        write_json(dir / file, j);
        art.bound_files.push_back(file);
      };
      if constexpr (std::is_same_v<Model, LinearModel>) {
        const auto& k = *art.constants;
        const StabilityConstants beta = kernel_stability(k.L, k.K, art.lambda, n);
        ConvergenceErrors mean, worst;
        for (const auto* r : mine) {
          mean.rho0 += r->errors->rho0 / static_cast<double>(mine.size());
          mean.rho1 += r->errors->rho1 / static_cast<double>(mine.size());
          worst.rho0 = std::max(worst.rho0, r->errors->rho0);
          worst.rho1 = std::max(worst.rho1, r->errors->rho1);
        }
        if (c.bounds.expected) emit(expected_bound(beta, mean, k.L, k.gamma, n, "mean over " + source));
        if (c.bounds.high_prob)
          emit(high_prob_bound(beta, worst, k.L, k.gamma, k.M, n, c.bounds.delta, "max over " + source));
      }
      if (c.bounds.nonconvex) {
        const auto& in = *c.bounds.nonconvex;
        double min_rho2 = 0.0;  // worst seed's best gradient norm
        for (const auto* r : mine) {
          double best = std::numeric_limits<double>::infinity();
          for (const auto& rec : r->trace.records) best = std::min(best, rec.grad_norm_sq);
          min_rho2 = std::max(min_rho2, best);
        }
        if (t1_reached(min_rho2, in.gamma, in.epsilon0)) {
          emit(nonconvex_bound(in.beta0, in.L, in.mu, min_rho2, in.local_gap, true, "max over " + source));
        } else {
          notes.push_back({{"algorithm", a.label}, {"bound_kind", "nonconvex"},
                           {"status", "precondition not met"},
                           {"detail", fmt::format("min rho2 {} > gamma^2 eps0^2 = {}", min_rho2,
                                                  in.gamma * in.gamma * in.epsilon0 * in.epsilon0)}});
        }
      }
    }
    summary["bound_reports"] = art.bound_files;
    if (!notes.empty()) summary["bound_notes"] = notes;
  });

  if (c.algorithms.size() >= 2) {
    in_stage("compare", [&] {
      std::vector<AlgorithmRuns> grouped;
      for (const auto& a : c.algorithms) {
        AlgorithmRuns g{a.label, {}};
        for (const auto* r : art.runs_of(a.label)) g.seeds.push_back(r->trace.records);
        grouped.push_back(std::move(g));
      }
      art.compare = compare_report(grouped, threshold_spec(c));
      summary["compare"] = to_json(*art.compare);
      std::ostringstream csv;
      write_compare_csv(*art.compare, csv);
      write_text(dir / "compare.csv", csv.str());
      summary["compare_table"] = "compare.csv";
    });
  }
}

}  // namespace detail

/// Runs every (algorithm, seed) pair of the config and writes the artifacts.
/// Failures are rethrown as StageError after summary.json is written with
/// "complete": false and the failing stage.
inline RunArtifact run_experiment(const ExperimentConfig& c) {
  RunArtifact art;
  art.dir = c.output_dir;
  art.name = c.name;
  art.task = c.task;
  json summary = {{"experiment", c.name}, {"task", to_string(c.task)}, {"complete", false}};
  try {
    detail::in_stage("artifacts", [&] {
      fs::create_directories(art.dir);
      detail::write_json(art.dir / "config.json", c.source);
    });
    const auto prob = detail::in_stage("data", [&] { return detail::build_data(c); });
    art.n_train = prob.train.size();
    art.n_test = prob.test.size();
    summary["n_train"] = art.n_train;
    summary["n_test"] = art.n_test;
    summary["dim"] = prob.train.dim();
    summary["thresholds"] = detail::threshold_json(detail::threshold_spec(c));
    switch (c.task) {
      case TaskType::linreg:
        detail::run_pipeline(c, prob, LinearModel(prob.train.dim()), LossSpec::squared(), art, summary);
        break;
      case TaskType::logreg:
        detail::run_pipeline(c, prob, LinearModel(prob.train.dim()), LossSpec::logistic(), art, summary);
        break;
      case TaskType::mlp: {
        const auto model = detail::in_stage("model", [&] {
          std::size_t classes = prob.train.task().classes;
          return MlpModel(prob.train.dim(), c.hidden, classes);
        });
        detail::run_pipeline(c, prob, model, LossSpec::cross_entropy(), art, summary);
        break;
      }
    }
    detail::in_stage("artifacts", [&] {
      std::vector<std::string> files = {"config.json"};
      for (const auto& r : art.runs) {
        files.push_back(r.csv_file);
        files.push_back(r.metadata_file);
        files.push_back(r.timing_file);
      }
      for (const auto& f : art.bound_files) files.push_back(f);
      if (art.compare) files.push_back("compare.csv");
      for (const auto& f : files)
        if (!fs::exists(art.dir / f)) throw std::runtime_error("indexed artifact missing: " + f);
      summary["files"] = files;
      summary["complete"] = true;
      detail::write_json(art.dir / "summary.json", summary);
    });
    art.complete = true;
    return art;
  } catch (const StageError& e) {
    summary["complete"] = false;
    summary["failed_stage"] = e.stage();
    summary["error"] = e.what();
    std::error_code ec;
    fs::create_directories(art.dir, ec);
    std::ofstream(art.dir / "summary.json") << summary.dump(2) << "\n";
    throw;
  }
}

/// Rebuilds the comparison table of a finished run directory from its trace CSVs.
inline CompareReport compare_directory(const fs::path& dir) {
  std::ifstream in(dir / "summary.json");
  if (!in) throw ArgumentError("compare: no summary.json in " + dir.string());
  const json summary = json::parse(in);
  if (!summary.value("complete", false)) throw DataError("compare: " + dir.string() + " holds an incomplete run");
  ThresholdSpec spec;
  const auto& t = summary.at("thresholds");
  spec.metric = t.at("metric").get<std::string>();
  spec.relative = t.at("mode").get<std::string>() == "relative";
  spec.values = t.at("values").get<std::vector<double>>();
  std::vector<AlgorithmRuns> grouped;
  for (const auto& r : summary.at("runs")) {
    const auto label = r.at("label").get<std::string>();
    auto it = std::find_if(grouped.begin(), grouped.end(), [&](const auto& g) { return g.label == label; });
    if (it == grouped.end()) {
      grouped.push_back({label, {}});
      it = std::prev(grouped.end());
    }
    std::ifstream csv(dir / r.at("csv").get<std::string>());
    if (!csv) throw DataError("compare: missing trace " + r.at("csv").get<std::string>());
    it->seeds.push_back(read_trace_csv(csv));
  }
  return compare_report(grouped, spec);
}

}  // namespace rerm
