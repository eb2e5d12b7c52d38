#include "cltheory/linalg.hpp"

#include <cmath>
#include <sstream>

namespace cltheory {

Lambda Lambda::finite(double value) {
  if (!(value >= 0.0) || !std::isfinite(value)) {
    throw Error("lambda must be a finite nonnegative number or Infinite");
  }
  return Lambda(value, false);
}

double Lambda::value() const {
  if (infinite_) throw Error("lambda is Infinite; no finite value");
  return value_;
}

std::string Lambda::to_string() const {
  if (infinite_) return "inf";
  std::ostringstream os;
  os.precision(17);
  os << value_;
  return os.str();
}

Nonlinearity parse_nonlinearity(const std::string& name) {
  if (name == "linear") return Nonlinearity::Linear;
  if (name == "relu") return Nonlinearity::Relu;
  throw Error("unknown nonlinearity '" + name + "' (expected linear or relu)");
}

std::string to_string(Nonlinearity nl) {
  return nl == Nonlinearity::Linear ? "linear" : "relu";
}

SpdSolver::SpdSolver(const Matrix& k) : n_(k.rows()) {
  if (k.rows() != k.cols()) throw Error("SpdSolver: matrix is not square");
  if (n_ == 0) return;
  if (!k.allFinite()) throw Error("SpdSolver: non-finite kernel entries");
  const double scale = std::abs(k.trace()) / static_cast<double>(n_);
  if (!(scale > 0.0)) throw Error("SpdSolver: kernel has zero trace");
  Matrix work = k;
  for (double rel = 1e-10; rel <= 1e-6 * (1.0 + 1e-12); rel *= 2.0) {
    jitter_ = rel * scale;
    work.diagonal() = k.diagonal().array() + jitter_;
    llt_.compute(work);
    if (llt_.info() == Eigen::Success) return;
  }
  throw Error("SpdSolver: kernel is singular beyond the jitter tolerance 1e-6*trace/P");
}

Matrix SpdSolver::inverse() const {
  return llt_.solve(Matrix::Identity(n_, n_));
}

double inv_quad(const SpdSolver& s, const Vector& y) { return y.dot(s.solve(y)); }

double normalized_loss(const Vector& pred, const Vector& y) {
  if (pred.size() != y.size()) throw Error("loss: prediction and label sizes differ");
  const double denom = y.squaredNorm();
  if (!(denom > 0.0)) throw Error("loss: label vector has zero norm");
  return (pred - y).squaredNorm() / denom;
}

}  // namespace cltheory
