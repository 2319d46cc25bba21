#pragma once

#include <cmath>
#include <random>

#include "ccl/encoder.hpp"
#include "ccl/numerics.hpp"

namespace ccl::test {

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (double& v : m.data()) v = n(rng);
  return m;
}

inline Matrix random_unit_rows(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  return l2_normalize_rows(random_matrix(rows, cols, rng));
}

inline FeatureBatch batch_of(const Matrix& unit_rows) {
  FeatureBatch f;
  f.embeddings = unit_rows;
  f.provenance.assign(unit_rows.rows(), Provenance::kNew);
  for (std::size_t i = 0; i < unit_rows.rows(); ++i) f.source.push_back(i);
  return f;
}

// Glorot init plus a small bias on every layer. Zero-bias ReLU nets map
// whole input cones to the zero vector, which random test batches hit.
inline EncoderParams live_params(const Architecture& arch, std::uint64_t seed) {
  EncoderParams p = init_params(arch, seed);
  for (auto& l : p.layers)
    for (double& b : l.bias) b = 0.1;
  return p;
}

// Row-major random stochastic matrix with strictly positive entries.
inline Matrix random_stochastic(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    double s = 0.0;
    for (double& v : m.row(i)) s += (v = u(rng));
    for (double& v : m.row(i)) v /= s;
  }
  return m;
}

}  // namespace ccl::test
