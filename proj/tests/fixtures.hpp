#pragma once

#include "cltheory/taskgen.hpp"
#include "cltheory/types.hpp"

#include <boost/random/normal_distribution.hpp>

#include <cstdint>
#include <vector>

#include "cltheory/rng.hpp"

namespace cltheory::testing {

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  CounterRng rng(seed, 0, "test-matrix");
  boost::random::normal_distribution<double> nd(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = nd(rng);
  return m;
}

// Rows rescaled to squared norm N0.
inline Matrix random_inputs(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  return renormalize_rows(random_matrix(rows, cols, seed));
}

inline Vector random_signs(Eigen::Index n, std::uint64_t seed) {
  const Matrix z = random_matrix(n, 1, seed ^ 0x5151);
  return z.col(0).unaryExpr([](double v) { return v >= 0.0 ? 1.0 : -1.0; });
}

inline Dataset make_task(Matrix x, Vector y, const std::string& id = "task") {
  Dataset d;
  d.x = std::move(x);
  d.y = std::move(y);
  d.task_id = id;
  return d;
}

// Preprocessed synthetic Gaussian-cluster pool.
inline Matrix synthetic_preprocessed_pool(int rows, int n0, std::uint64_t seed) {
  return preprocess(synthetic_pool(rows, n0, 10, seed).images);
}

}  // namespace cltheory::testing
