#pragma once

// Datasets: immutable feature/label tables, synthetic generators, libsvm
// ingestion and deterministic splitting.
//
// libsvm label rule (binary mode): if every raw label is -1 or +1 the labels
// are kept; otherwise exactly two distinct raw values are required and the
// smaller maps to -1, the larger to +1 ({0,1} -> {-1,+1}). A file with a
// single distinct raw value maps it by sign (> 0 -> +1, else -1). Multiclass
// mode maps the sorted distinct raw labels to 0..k-1. Regression keeps raw
// values.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <fmt/format.h>

#include "rerm/error.hpp"
#include "rerm/rng.hpp"

namespace rerm {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

enum class TaskKind { regression, binary, multiclass };

struct Task {
  TaskKind kind = TaskKind::regression;
  std::size_t classes = 0;  // multiclass only

  static Task regression() { return {TaskKind::regression, 0}; }
  static Task binary() { return {TaskKind::binary, 2}; }
  static Task multiclass(std::size_t k) { return {TaskKind::multiclass, k}; }

  friend bool operator==(const Task&, const Task&) = default;
};

inline std::string to_string(const Task& task) {
  switch (task.kind) {
    case TaskKind::regression: return "regression";
    case TaskKind::binary: return "binary";
    case TaskKind::multiclass: return "multiclass(" + std::to_string(task.classes) + ")";
  }
  return "unknown";
}

/// One example z = (x, y). For multiclass tasks the label holds the class index.
struct Instance {
  Vector features;
  double label = 0.0;
};

class Dataset {
 public:
  Dataset(RowMatrix features, Vector labels, Task task)
      : features_(std::move(features)), labels_(std::move(labels)), task_(task) {
    if (features_.rows() == 0) throw ArgumentError("Dataset: n must be positive");
    if (features_.cols() == 0) throw ArgumentError("Dataset: d must be positive");
    if (labels_.size() != features_.rows())
      throw ArgumentError("Dataset: label count does not match feature rows");
    for (Eigen::Index i = 0; i < labels_.size(); ++i) check_label(labels_[i]);
  }

  static Dataset from_instances(const std::vector<Instance>& instances, Task task) {
    if (instances.empty()) throw ArgumentError("Dataset: n must be positive");
    const auto d = instances.front().features.size();
    RowMatrix x(static_cast<Eigen::Index>(instances.size()), d);
    Vector y(static_cast<Eigen::Index>(instances.size()));
    for (std::size_t i = 0; i < instances.size(); ++i) {
      if (instances[i].features.size() != d)
        throw ArgumentError("Dataset: instance " + std::to_string(i) + " has dimension " +
                            std::to_string(instances[i].features.size()) + ", expected " +
                            std::to_string(d));
      x.row(static_cast<Eigen::Index>(i)) = instances[i].features.transpose();
      y[static_cast<Eigen::Index>(i)] = instances[i].label;
    }
    return Dataset(std::move(x), std::move(y), task);
  }

  std::size_t size() const { return static_cast<std::size_t>(features_.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(features_.cols()); }
  const Task& task() const { return task_; }

  const RowMatrix& features() const { return features_; }
  const Vector& labels() const { return labels_; }

  auto row(std::size_t i) const { return features_.row(static_cast<Eigen::Index>(i)); }
  double label(std::size_t i) const { return labels_[static_cast<Eigen::Index>(i)]; }

  Instance instance(std::size_t i) const {
    check_index(i);
    return {row(i).transpose(), label(i)};
  }

  /// Rows in the given order (duplicates allowed).
  Dataset subset(std::span<const std::size_t> indices) const {
    if (indices.empty()) throw ArgumentError("Dataset::subset: empty index set");
    RowMatrix x(static_cast<Eigen::Index>(indices.size()), features_.cols());
    Vector y(static_cast<Eigen::Index>(indices.size()));
    for (std::size_t k = 0; k < indices.size(); ++k) {
      check_index(indices[k]);
      x.row(static_cast<Eigen::Index>(k)) = row(indices[k]);
      y[static_cast<Eigen::Index>(k)] = label(indices[k]);
    }
    return Dataset(std::move(x), std::move(y), task_);
  }

  /// max_i ||x_i||, the kernel-norm bound K for the linear kernel.
  double max_row_norm() const {
    double k = 0.0;
    for (std::size_t i = 0; i < size(); ++i) k = std::max(k, row(i).norm());
    return k;
  }

  friend bool operator==(const Dataset& a, const Dataset& b) {
    return a.task_ == b.task_ && a.features_.rows() == b.features_.rows() &&
           a.features_.cols() == b.features_.cols() && a.features_ == b.features_ &&
           a.labels_ == b.labels_;
  }

 private:
  void check_index(std::size_t i) const {
    if (i >= size())
      throw ArgumentError("Dataset: index " + std::to_string(i) + " out of range for n=" +
                          std::to_string(size()));
  }

  void check_label(double y) const {
    switch (task_.kind) {
      case TaskKind::regression:
        if (!std::isfinite(y)) throw DataError("Dataset: non-finite regression label");
        break;
      case TaskKind::binary:
        if (y != -1.0 && y != 1.0) throw DataError("Dataset: binary labels must be -1 or +1");
        break;
      case TaskKind::multiclass:
        if (task_.classes < 2) throw ArgumentError("Dataset: multiclass needs k >= 2");
        if (y < 0 || y != std::floor(y) || y >= static_cast<double>(task_.classes))
          throw DataError("Dataset: class index out of range for k=" +
                          std::to_string(task_.classes));
        break;
    }
  }

  RowMatrix features_;
  Vector labels_;
  Task task_;
};

// ---------------------------------------------------------------------------
// Synthetic generators

struct RegressionData {
  Dataset dataset;
  Vector true_weights;
};

/// x ~ N(0, I_d), y = <x, w*> + eps with eps ~ N(0, noise_sd^2). w* ~ N(0, I/d)
/// is drawn first from the same stream, so ||w*|| is about 1.
inline RegressionData generate_gaussian_regression(std::size_t n, std::size_t d, double noise_sd,
                                                   std::uint64_t seed) {
  if (n < 2) throw ArgumentError("generate_gaussian_regression: n must be >= 2");
  if (d < 1) throw ArgumentError("generate_gaussian_regression: d must be >= 1");
  if (!(noise_sd >= 0.0)) throw ArgumentError("generate_gaussian_regression: noise_sd < 0");
  Rng rng(seed);
  Vector w(static_cast<Eigen::Index>(d));
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  for (auto& v : w) v = scale * rng.normal();
  RowMatrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  Vector y(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = rng.normal();
    const double noise = rng.normal();
    y[i] = x.row(i).dot(w) + noise_sd * noise;
  }
  return {Dataset(std::move(x), std::move(y), Task::regression()), std::move(w)};
}

/// Dense binary classification: x ~ N(0, I/d) (so ||x|| is about 1),
/// P(y=+1|x) = sigmoid(sharpness * <w*, x>) with w* ~ N(0, I).
inline Dataset generate_logistic_classification(std::size_t n, std::size_t d, double sharpness,
                                                std::uint64_t seed) {
  if (n < 2 || d < 1) throw ArgumentError("generate_logistic_classification: need n >= 2, d >= 1");
  Rng rng(seed);
  Vector w(static_cast<Eigen::Index>(d));
  for (auto& v : w) v = rng.normal();
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  RowMatrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  Vector y(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = scale * rng.normal();
    const double margin = sharpness * x.row(i).dot(w);
    const double p = 1.0 / (1.0 + std::exp(-margin));
    y[i] = rng.uniform() < p ? 1.0 : -1.0;
  }
  return Dataset(std::move(x), std::move(y), Task::binary());
}

/// Text-like binary data: nonnegative sparse rows scaled to unit norm, labels
/// from a logistic teacher on the centered features.
inline Dataset generate_sparse_binary(std::size_t n, std::size_t d, double density,
                                      double sharpness, std::uint64_t seed) {
  if (n < 2 || d < 1) throw ArgumentError("generate_sparse_binary: need n >= 2, d >= 1");
  if (!(density > 0.0 && density <= 1.0))
    throw ArgumentError("generate_sparse_binary: density must be in (0, 1]");
  Rng rng(seed);
  Vector w(static_cast<Eigen::Index>(d));
  for (auto& v : w) v = rng.normal();
  RowMatrix x = RowMatrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      if (rng.uniform() < density) x(i, j) = -std::log(1.0 - rng.uniform());
    }
    if (x.row(i).squaredNorm() == 0.0) x(i, static_cast<Eigen::Index>(rng.index(d))) = 1.0;
    x.row(i) /= x.row(i).norm();
  }
  const Eigen::RowVectorXd mean = x.colwise().mean();
  Vector y(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double margin = sharpness * (x.row(i) - mean).dot(w);
    y[i] = rng.uniform() < 1.0 / (1.0 + std::exp(-margin)) ? 1.0 : -1.0;
  }
  return Dataset(std::move(x), std::move(y), Task::binary());
}

/// k Gaussian blobs: centers ~ N(0, separation^2 I), x = center_y + N(0, I),
/// y uniform over classes.
inline Dataset generate_gaussian_classes(std::size_t n, std::size_t d, std::size_t classes,
                                         double separation, std::uint64_t seed) {
  if (n < 2 || d < 1 || classes < 2)
    throw ArgumentError("generate_gaussian_classes: need n >= 2, d >= 1, k >= 2");
  Rng rng(seed);
  RowMatrix centers(static_cast<Eigen::Index>(classes), static_cast<Eigen::Index>(d));
  for (Eigen::Index c = 0; c < centers.rows(); ++c)
    for (Eigen::Index j = 0; j < centers.cols(); ++j) centers(c, j) = separation * rng.normal();
  RowMatrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  Vector y(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const auto c = static_cast<Eigen::Index>(rng.index(classes));
    y[i] = static_cast<double>(c);
    for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = centers(c, j) + rng.normal();
  }
  return Dataset(std::move(x), std::move(y), Task::multiclass(classes));
}

// ---------------------------------------------------------------------------
// libsvm text format

enum class LibsvmMode { binary, regression, multiclass };

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline double parse_double(std::string_view tok, std::size_t line, const char* what) {
  std::string s(tok);
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw ParseError(line, std::string("invalid ") + what + " '" + s + "'");
  }
  if (used != s.size()) throw ParseError(line, std::string("invalid ") + what + " '" + s + "'");
  if (!std::isfinite(v)) throw ParseError(line, std::string("non-finite ") + what);
  return v;
}

}  // namespace detail

/// Parses libsvm text from a stream. Indices are 1-based and strictly
/// ascending within a line; blank lines and '#' comments are skipped.
/// d is the maximum observed index, raised to min_dim if that is larger.
inline Dataset parse_libsvm(std::istream& in, LibsvmMode mode = LibsvmMode::binary,
                            std::size_t min_dim = 0) {
  struct Row {
    double raw_label;
    std::vector<std::pair<std::size_t, double>> entries;
  };
  std::vector<Row> rows;
  std::size_t max_index = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view(line);
    if (const auto hash = view.find('#'); hash != std::string_view::npos) view = view.substr(0, hash);
    view = detail::trim(view);
    if (view.empty()) continue;

    std::istringstream tokens{std::string(view)};
    std::string tok;
    tokens >> tok;
    Row row{detail::parse_double(tok, line_no, "label"), {}};
    std::size_t last = 0;
    while (tokens >> tok) {
      const auto colon = tok.find(':');
      if (colon == std::string::npos || colon == 0 || colon + 1 == tok.size())
        throw ParseError(line_no, "expected idx:val, got '" + tok + "'");
      const std::string idx_text = tok.substr(0, colon);
      if (idx_text.find_first_not_of("0123456789") != std::string::npos)
        throw ParseError(line_no, "invalid feature index '" + idx_text + "'");
      const auto idx = static_cast<std::size_t>(std::stoull(idx_text));
      if (idx == 0) throw ParseError(line_no, "feature indices are 1-based");
      if (idx <= last) throw ParseError(line_no, "feature indices must be strictly ascending");
      last = idx;
      row.entries.emplace_back(idx, detail::parse_double(std::string_view(tok).substr(colon + 1),
                                                         line_no, "feature value"));
    }
    max_index = std::max(max_index, last);
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DataError("parse_libsvm: no instances");
  const std::size_t d = std::max(max_index, min_dim);
  if (d == 0) throw DataError("parse_libsvm: no features and no minimum dimension");

  std::set<double> distinct;
  for (const auto& r : rows) distinct.insert(r.raw_label);

  Task task = Task::regression();
  std::map<double, double> relabel;
  switch (mode) {
    case LibsvmMode::regression:
      break;
    case LibsvmMode::binary: {
      task = Task::binary();
      const bool canonical = std::all_of(distinct.begin(), distinct.end(),
                                         [](double v) { return v == -1.0 || v == 1.0; });
      if (canonical) {
        for (double v : distinct) relabel[v] = v;
      } else if (distinct.size() == 2) {
        relabel[*distinct.begin()] = -1.0;
        relabel[*distinct.rbegin()] = 1.0;
      } else if (distinct.size() == 1) {
        const double v = *distinct.begin();
        relabel[v] = v > 0 ? 1.0 : -1.0;
      } else {
        throw DataError("parse_libsvm: binary mode found " + std::to_string(distinct.size()) +
                        " distinct labels");
      }
      break;
    }
    case LibsvmMode::multiclass: {
      if (distinct.size() < 2) throw DataError("parse_libsvm: multiclass needs >= 2 labels");
      task = Task::multiclass(distinct.size());
      double next = 0.0;
      for (double v : distinct) relabel[v] = next++;
      break;
    }
  }

  RowMatrix x = RowMatrix::Zero(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(d));
  Vector y(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    for (const auto& [idx, val] : rows[i].entries) x(r, static_cast<Eigen::Index>(idx - 1)) = val;
    y[r] = mode == LibsvmMode::regression ? rows[i].raw_label : relabel.at(rows[i].raw_label);
  }
  return Dataset(std::move(x), std::move(y), task);
}

inline Dataset parse_libsvm(const std::string& path, LibsvmMode mode = LibsvmMode::binary,
                            std::size_t min_dim = 0) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("parse_libsvm: cannot open '" + path + "'");
  return parse_libsvm(in, mode, min_dim);
}

/// Writes nonzero features only, values in shortest round-trip form.
inline void write_libsvm(const Dataset& data, std::ostream& out) {
  for (std::size_t i = 0; i < data.size(); ++i) {
    out << fmt::format("{}", data.label(i));
    const auto row = data.row(i);
    for (Eigen::Index j = 0; j < row.size(); ++j) {
      if (row[j] != 0.0) out << fmt::format(" {}:{}", j + 1, row[j]);
    }
    out << '\n';
  }
}

inline void write_libsvm(const Dataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ArgumentError("write_libsvm: cannot open '" + path + "'");
  write_libsvm(data, out);
}

// ---------------------------------------------------------------------------
// Splits and perturbations

struct TrainTest {
  Dataset train;
  Dataset test;
};

/// Seeded Fisher-Yates permutation; the first floor(fraction * n) shuffled
/// indices form the training set. Each part keeps the original row order.
inline TrainTest split(const Dataset& data, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw ArgumentError("split: train_fraction must lie in (0, 1)");
  const std::size_t n = data.size();
  const auto n_train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(n)));
  if (n_train < 1 || n_train >= n)
    throw ArgumentError("split: fraction leaves an empty train or test set for n=" +
                        std::to_string(n));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<std::size_t> train(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> test(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {data.subset(train), data.subset(test)};
}

/// S^j: copy of the dataset with instance j replaced.
inline Dataset replace_instance(const Dataset& data, std::size_t j, const Instance& z) {
  if (j >= data.size())
    throw ArgumentError("replace_instance: index " + std::to_string(j) + " out of range");
  if (static_cast<std::size_t>(z.features.size()) != data.dim())
    throw ArgumentError("replace_instance: replacement has dimension " +
                        std::to_string(z.features.size()) + ", expected " +
                        std::to_string(data.dim()));
  RowMatrix x = data.features();
  Vector y = data.labels();
  x.row(static_cast<Eigen::Index>(j)) = z.features.transpose();
  y[static_cast<Eigen::Index>(j)] = z.label;
  return Dataset(std::move(x), std::move(y), data.task());
}

/// S^{\j}: copy of the dataset without instance j.
inline Dataset remove_instance(const Dataset& data, std::size_t j) {
  if (j >= data.size())
    throw ArgumentError("remove_instance: index " + std::to_string(j) + " out of range");
  if (data.size() < 2) throw ArgumentError("remove_instance: would leave an empty dataset");
  std::vector<std::size_t> keep;
  keep.reserve(data.size() - 1);
  for (std::size_t i = 0; i < data.size(); ++i)
    if (i != j) keep.push_back(i);
  return data.subset(keep);
}

inline Dataset concatenate(const Dataset& a, const Dataset& b) {
  if (a.dim() != b.dim() || !(a.task() == b.task()))
    throw ArgumentError("concatenate: datasets differ in dimension or task");
  RowMatrix x(a.features().rows() + b.features().rows(), a.features().cols());
  x << a.features(), b.features();
  Vector y(a.labels().size() + b.labels().size());
  y << a.labels(), b.labels();
  return Dataset(std::move(x), std::move(y), a.task());
}

}  // namespace rerm
