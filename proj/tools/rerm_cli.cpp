// rerm: run experiments, compare artifact directories, and evaluate bounds.
//
// Exit codes: 0 success, 1 a check failed, 2 bad usage or configuration,
// 3 a pipeline stage failed.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "rerm/rerm.hpp"

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr int kCheckFailed = 1;
constexpr int kUsage = 2;
constexpr int kStageFailed = 3;

void emit_json(const json& j, const std::string& out) {
  if (out.empty()) {
    std::cout << j.dump(2) << "\n";
    return;
  }
  const fs::path p(out);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p);
  f << j.dump(2) << "\n";
  if (!f) throw rerm::StageError("output", "cannot write " + out);
  std::cout << "wrote " << out << "\n";
}

void print_compare(const rerm::CompareReport& r) {
  fmt::print("passes to {} {} threshold (median over seeds)\n", r.spec.relative ? "relative" : "absolute",
             r.spec.metric);
  fmt::print("{:>12}", "threshold");
  for (const auto& a : r.algorithms) fmt::print(" {:>12}", a);
  fmt::print("\n");
  for (const auto& row : r.rows) {
    fmt::print("{:>12.3g}", row.threshold);
    for (const auto& p : row.passes) fmt::print(" {:>12}", p ? fmt::format("{:.4g}", *p) : "not reached");
    fmt::print("\n");
  }
  fmt::print("early winner (loosest threshold): {}\n", r.early_winner());
  if (r.tightest_common) {
    fmt::print("late winner (tightest common threshold {:.3g}): {}\n", *r.tightest_common, r.late_winner());
  } else {
    fmt::print("late winner: not reached (no threshold reached by every algorithm)\n");
  }
}

int cmd_run(const std::string& config, std::optional<std::uint64_t> seed, const std::string& out,
            bool paper_scale) {
  rerm::ExperimentConfig c;
  try {
    c = rerm::load_config(config, paper_scale);
  } catch (const std::exception& e) {
    fmt::print(stderr, "error [config]: {}\n", e.what());
    return kUsage;
  }
  if (seed) c.seeds = {*seed};
  if (!out.empty()) c.output_dir = out;
  const auto art = rerm::run_experiment(c);
  fmt::print("{}: {} run(s), n_train={}, n_test={}, lambda={:.6g}\n", art.name, art.runs.size(), art.n_train,
             art.n_test, art.lambda);
  if (art.constants)
    fmt::print("constants: kappa={:.4g} kappa_full={:.4g} gamma_w={:.4g} mu={:.4g}\n", art.constants->kappa,
               art.constants->kappa_full, art.constants->gamma_w, art.constants->mu);
  for (const auto& r : art.runs) {
    const auto& last = r.trace.last();
    fmt::print("  {:<8} seed {:<4} passes {:>9.4g}  train {:.6g}  test {:.6g}\n", r.label, r.seed,
               last.data_passes, last.train_risk, last.test_risk);
  }
  if (art.compare) print_compare(*art.compare);
  fmt::print("artifacts in {}\n", art.dir.string());
  return 0;
}

int cmd_compare(const std::string& dir, const std::string& out) {
  const auto report = rerm::compare_directory(dir);
  print_compare(report);
  if (!out.empty()) emit_json(rerm::to_json(report), out);
  return 0;
}

int cmd_check_gradients(std::uint64_t seed, std::size_t probes, const std::string& out) {
  const auto checks = rerm::check_gradients(seed, probes);
  json j = json::array();
  bool ok = true;
  for (const auto& c : checks) {
    fmt::print("{:<18} probes {:>3}  worst relative mismatch {:.3e}  {}\n", c.family, c.probes, c.worst_mismatch,
               c.passed() ? "ok" : "FAILED");
    ok = ok && c.passed();
    j.push_back({{"family", c.family}, {"probes", c.probes}, {"worst_mismatch", c.worst_mismatch},
                 {"tolerance", c.tolerance}, {"passed", c.passed()}});
  }
  if (!out.empty()) emit_json(j, out);
  return ok ? 0 : kCheckFailed;
}

int cmd_stability(std::uint64_t seed, std::size_t n, double lambda, std::size_t trials, const std::string& out) {
  const auto a = rerm::stability_audit(seed, n, 5, lambda, trials);
  fmt::print("logistic, n={}, lambda={}, K={:.4g}, {} trials\n", n, lambda, a.measured.K, trials);
  fmt::print("  max loss change   {:.4e}  <= beta0 {:.4e}  {}\n", a.measured.max_loss_change, a.bound.beta0,
             a.loss_contained() ? "ok" : "VIOLATED");
  fmt::print("  max output change {:.4e}  <= beta1 {:.4e}  {}\n", a.measured.max_output_change, a.bound.beta1,
             a.output_contained() ? "ok" : "VIOLATED");
  if (!out.empty()) emit_json(rerm::to_json(a), out);
  return a.loss_contained() && a.output_contained() ? 0 : kCheckFailed;
}

rerm::Algorithm parse_algorithm(const std::string& s) {
  if (s == "gd") return rerm::Algorithm::gd;
  if (s == "sgd") return rerm::Algorithm::sgd;
  if (s == "svrg") return rerm::Algorithm::svrg;
  throw rerm::ArgumentError("algorithm must be gd, sgd or svrg");
}

// Reads a bound request: {"kind": ..., inputs...}. See README for the keys.
json evaluate_bounds(const json& in) {
  const auto kind = in.at("kind").get<std::string>();
  auto num = [&](const char* key) { return in.at(key).get<double>(); };
  auto stability = [&]() -> rerm::StabilityConstants {
    const auto& s = in.at("stability");
    if (s.contains("beta0")) return {s.at("beta0").get<double>(), s.value("beta1", 0.0)};
    return rerm::kernel_stability(s.at("L").get<double>(), s.at("K").get<double>(), s.at("lambda").get<double>(),
                                  num("n"));
  };
  auto rho = [&] {
    rerm::ConvergenceErrors e;
    e.rho0 = num("rho0");
    e.rho1 = num("rho1");
    return e;
  };
  const std::string source = in.value("rho_source", "user-supplied");
  if (kind == "expected") return rerm::to_json(rerm::expected_bound(stability(), rho(), num("L"), num("gamma"), num("n"), source));
  if (kind == "high_prob")
    return rerm::to_json(
        rerm::high_prob_bound(stability(), rho(), num("L"), num("gamma"), num("M"), num("n"), num("delta"), source));
  if (kind == "nonconvex") {
    bool certified = in.value("t1_certified", false);
    if (in.contains("epsilon0"))
      certified = rerm::t1_reached(num("min_rho2"), num("gamma"), num("epsilon0"));
    return rerm::to_json(rerm::nonconvex_bound(num("beta0"), num("L"), num("mu"), num("min_rho2"),
                                               num("local_gap"), certified, source));
  }
  if (kind == "sufficient_training") {
    const auto regime = in.at("regime").get<std::string>();
    if (regime != "convex" && regime != "nonconvex") throw rerm::ArgumentError("regime must be convex or nonconvex");
    std::optional<double> eps;
    if (in.contains("epsilon0")) eps = num("epsilon0");
    const double factor = in.value("constant_factor", 1.0);
    json j = json::object();
    for (const char* a : {"gd", "sgd", "svrg"}) {
      const auto r = rerm::sufficient_training(parse_algorithm(a), regime == "convex" ? rerm::Regime::convex
                                                                                       : rerm::Regime::nonconvex,
                                               in.value("kappa", 0.0), num("n"), num("d"), eps, factor);
      j[a] = {{"iterations", r.iterations}, {"time_units", r.time_units}};
    }
    j["label"] = rerm::kOrderEstimateLabel;
    return j;
  }
  if (kind == "corollary") {
    return {{"algorithm", in.at("algorithm")},
            {"order", rerm::corollary_orders(parse_algorithm(in.at("algorithm").get<std::string>()), num("kappa"),
                                             num("n"), num("T"), num("delta"))},
            {"label", rerm::kOrderEstimateLabel}};
  }
  throw rerm::ArgumentError("kind must be expected, high_prob, nonconvex, sufficient_training or corollary");
}

int cmd_bounds(const std::string& inputs, const std::string& out) {
  std::ifstream f(inputs);
  if (!f) throw rerm::ArgumentError("cannot open " + inputs);
  json in;
  try {
    in = json::parse(f);
  } catch (const json::exception& e) {
    throw rerm::ArgumentError(fmt::format("{} is not valid JSON: {}", inputs, e.what()));
  }
  json result;
  try {
    result = evaluate_bounds(in);
  } catch (const json::exception& e) {
    throw rerm::ArgumentError(fmt::format("{}: {}", inputs, e.what()));
  }
  emit_json(result, out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Regularized ERM optimizers, traces and generalization bounds"};
  app.require_subcommand(1);
  std::optional<std::uint64_t> seed;
  std::string out;
  bool paper_scale = false;
  app.add_option("--seed", seed, "Seed override (run: replaces the seed list)");
  app.add_option("--out", out, "Output directory (run) or JSON file (other commands)");
  app.add_flag("--paper-scale", paper_scale, "Apply the config's paper_scale block");

  std::string config, dir, inputs;
  auto* run = app.add_subcommand("run", "Run an experiment config");
  run->add_option("config", config, "Config file (JSON)")->required()->check(CLI::ExistingFile);
  auto* compare = app.add_subcommand("compare", "Rebuild the comparison table of an artifact directory");
  compare->add_option("artifact-dir", dir, "Directory written by run")->required()->check(CLI::ExistingDirectory);
  std::size_t probes = 30;
  auto* grad = app.add_subcommand("check-gradients", "Analytic vs finite-difference gradients");
  grad->add_option("--probes", probes, "Probes per loss family")->check(CLI::PositiveNumber);
  std::size_t n = 100, trials = 200;
  double lambda = 0.1;
  auto* stab = app.add_subcommand("stability-audit", "Replace-one stability of logistic regression");
  stab->add_option("--n", n, "Training set size")->check(CLI::PositiveNumber);
  stab->add_option("--lambda", lambda, "Regularization")->check(CLI::PositiveNumber);
  stab->add_option("--trials", trials, "Replace-one trials")->check(CLI::PositiveNumber);
  auto* bounds = app.add_subcommand("bounds", "Evaluate a bound from a JSON input file");
  bounds->add_option("report-inputs", inputs, "Bound inputs (JSON)")->required()->check(CLI::ExistingFile);
  for (auto* sub : {run, compare, grad, stab, bounds}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }

  try {
    if (*run) return cmd_run(config, seed, out, paper_scale);
    if (*compare) return cmd_compare(dir, out);
    if (*grad) return cmd_check_gradients(seed.value_or(1), probes, out);
    if (*stab) return cmd_stability(seed.value_or(1), n, lambda, trials, out);
    if (*bounds) return cmd_bounds(inputs, out);
  } catch (const rerm::StageError& e) {
    fmt::print(stderr, "error in stage {}\n", e.what());
    return kStageFailed;
  } catch (const rerm::ArgumentError& e) {
    fmt::print(stderr, "error [arguments]: {}\n", e.what());
    return kUsage;
  } catch (const rerm::PreconditionError& e) {
    fmt::print(stderr, "error [bounds]: {}\n", e.what());
    return kCheckFailed;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error [{}]: {}\n", app.get_subcommands().front()->get_name(), e.what());
    return kStageFailed;
  }
  return kUsage;
}
