// Regenerates the bundled sample sets under data/.
//   make_samples <out-dir>

#include <cmath>
#include <filesystem>
#include <iostream>

#include "rerm/data.hpp"

namespace {

// Four decimals keep the files small; the sets are fixed once written.
rerm::Dataset rounded(const rerm::Dataset& d) {
  rerm::RowMatrix x = (d.features().array() * 1e4).round() / 1e4;
  return rerm::Dataset(std::move(x), d.labels(), d.task());
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: make_samples <out-dir>\n";
    return 2;
  }
  const std::filesystem::path dir = argv[1];
  std::filesystem::create_directories(dir);
  // Sparse nonnegative unit-norm rows with a logistic label model.
  rerm::write_libsvm(rounded(rerm::generate_sparse_binary(4000, 50, 0.1, 8.0, 20240501)),
                     (dir / "logistic_sample.svm").string());
  // Ten Gaussian classes in 20 dimensions for the MLP task.
  rerm::write_libsvm(rounded(rerm::generate_gaussian_classes(3000, 20, 10, 1.0, 20240502)),
                     (dir / "multiclass_sample.svm").string());
  std::cout << "wrote samples to " << dir << "\n";
  return 0;
}
