#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include "csa/data.h"
#include "csa/random.h"

namespace test {

namespace fs = std::filesystem;

/// Fresh empty directory under the system temp dir.
inline fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("csa_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

inline fs::path write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  return path;
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline csa::RowMatrix random_matrix(csa::Rng& rng, Eigen::Index rows, Eigen::Index cols,
                                    double scale = 1.0, double shift = 0.0) {
  csa::RowMatrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = shift + scale * rng.normal();
  }
  return m;
}

}  // namespace test

#include "csa/model.h"
#include "csa/simulate.h"

namespace test {

/// Small simulated cohort, split, imputed and standardized.
inline csa::SurvivalDataset small_cohort(std::size_t n, std::uint64_t seed = 3) {
  csa::SimConfig c = csa::SimConfig::actg_synthetic();
  c.seed = seed;
  const auto cohort = csa::assemble_cohort(c, n);
  return csa::standardize(csa::impute_missing(csa::with_split(cohort.data, seed))).dataset;
}

inline csa::Architecture tiny_architecture() {
  csa::Architecture a;
  a.hidden = 6;
  a.latent = 4;
  a.head_hidden = 5;
  a.head_joint = 6;
  a.noise_dim = 3;
  return a;
}

}  // namespace test
