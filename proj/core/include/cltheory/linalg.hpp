#pragma once

#include "cltheory/types.hpp"

#include <Eigen/Cholesky>

namespace cltheory {

// Cholesky factorization of a symmetric PSD kernel matrix with additive
// jitter. Starts at 1e-10 * trace/P and doubles up to 1e-6 * trace/P.
class SpdSolver {
 public:
  SpdSolver() = default;
  explicit SpdSolver(const Matrix& k);

  Matrix solve(const Matrix& b) const { return llt_.solve(b); }
  Vector solve(const Vector& b) const { return llt_.solve(b); }
  Matrix inverse() const;
  double jitter() const { return jitter_; }
  Eigen::Index size() const { return n_; }

 private:
  Eigen::LLT<Matrix> llt_;
  double jitter_ = 0.0;
  Eigen::Index n_ = 0;
};

// Quadratic form y^T K^{-1} y.
double inv_quad(const SpdSolver& s, const Vector& y);

// Normalized squared error sum (pred - y)^2 / |y|^2.
double normalized_loss(const Vector& pred, const Vector& y);

}  // namespace cltheory
