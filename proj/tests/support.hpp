#pragma once

// Test-local oracles, written independently of the library code they check.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "rerm/rerm.hpp"

namespace rerm_test {

inline std::string source_path(const std::string& rel) { return std::string(RERM_SOURCE_DIR) + "/" + rel; }

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("rerm_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

/// Central differences, one coordinate at a time.
inline Eigen::VectorXd central_diff(const std::function<double(const Eigen::VectorXd&)>& f,
                                    const Eigen::VectorXd& w, double h) {
  Eigen::VectorXd g(w.size());
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    Eigen::VectorXd up = w, down = w;
    up[i] += h;
    down[i] -= h;
    g[i] = (f(up) - f(down)) / (2 * h);
  }
  return g;
}

inline double rel_inf_error(const Eigen::VectorXd& analytic, const Eigen::VectorXd& numeric) {
  return (analytic - numeric).cwiseAbs().maxCoeff() / (1.0 + analytic.cwiseAbs().maxCoeff());
}

/// Plain-loop MLP forward pass + cross-entropy, parameter order W1, b1, W2, b2 (row-major).
inline double mlp_cross_entropy(const Eigen::VectorXd& w, const Eigen::VectorXd& x, int label, int d, int h,
                                int k) {
  std::vector<double> hidden(static_cast<std::size_t>(h));
  for (int j = 0; j < h; ++j) {
    double a = w[d * h + j];
    for (int i = 0; i < d; ++i) a += w[j * d + i] * x[i];
    hidden[static_cast<std::size_t>(j)] = 1.0 / (1.0 + std::exp(-a));
  }
  const int off = d * h + h;
  std::vector<double> z(static_cast<std::size_t>(k));
  double top = -1e300;
  for (int c = 0; c < k; ++c) {
    double a = w[off + k * h + c];
    for (int j = 0; j < h; ++j) a += w[off + c * h + j] * hidden[static_cast<std::size_t>(j)];
    z[static_cast<std::size_t>(c)] = a;
    top = std::max(top, a);
  }
  double total = 0;
  for (double v : z) total += std::exp(v - top);
  return top + std::log(total) - z[static_cast<std::size_t>(label)];
}

inline rerm::Dataset toy_regression(std::size_t n, std::size_t d, std::uint64_t seed) {
  return rerm::generate_gaussian_regression(n, d, 0.1, seed).dataset;
}

}  // namespace rerm_test
