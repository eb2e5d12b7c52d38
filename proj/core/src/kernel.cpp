#include "cltheory/kernel.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace cltheory {

void KernelConfig::validate() const {
  if (depth < 1) throw Error("kernel: depth L must be >= 1");
  if (!(sigma_sq > 0.0) || !std::isfinite(sigma_sq)) throw Error("kernel: sigma_sq must be > 0");
  if (input_dim < 1) throw Error("kernel: input_dim N0 must be >= 1");
}

TemporalFactors temporal_factors(int t, int t_prime, const KernelConfig& cfg) {
  if (t < 1 || t_prime < 1) throw Error("temporal_factors: time indices must be >= 1");
  if (!(cfg.sigma_sq > 0.0)) throw Error("temporal_factors: sigma_sq must be > 0");
  TemporalFactors f;
  f.t = t;
  f.t_prime = t_prime;
  const int hi = std::max(t, t_prime);
  const int lo = std::min(t, t_prime);
  const double s2 = cfg.sigma_sq;
  if (cfg.lambda.is_infinite()) {
    f.lambda_tilde = 1.0;
    f.m1 = s2;
    f.m0 = lo == 1 ? 0.0 : s2;
    return f;
  }
  const double lam = cfg.lambda.value();
  const double lt = lam / (lam + 1.0 / s2);
  f.lambda_tilde = lt;
  if (lo == 1) {
    f.m1 = s2 * std::pow(lt, hi - 1);
    f.m0 = 0.0;
    return f;
  }
  const double pre = s2 / (1.0 + lt);
  const double shared = std::pow(lt, hi + lo - 1);
  f.m1 = pre * (std::pow(lt, hi - lo) + shared);
  f.m0 = pre * (std::pow(lt, hi - lo + 2) + shared);
  return f;
}

namespace {

void check_inputs(const Matrix& xa, const Matrix& xb, const KernelConfig& cfg) {
  cfg.validate();
  if (xa.cols() != xb.cols()) throw Error("kernel: XA and XB have different column counts");
  if (xa.cols() != cfg.input_dim) throw Error("kernel: input column count differs from N0");
  if (!xa.allFinite() || !xb.allFinite()) throw Error("kernel: non-finite inputs");
}

// Gram matrix with a fixed scalar reduction order per entry, so that
// gram(B, A) is bitwise the transpose of gram(A, B).
Matrix gram(const Matrix& xa, const Matrix& xb) {
  const Matrix at = xa.transpose();
  const Matrix bt = xb.transpose();
  const Eigen::Index n = at.rows();
  Matrix out(xa.rows(), xb.rows());
  for (Eigen::Index j = 0; j < bt.cols(); ++j) {
    const double* b = bt.col(j).data();
    for (Eigen::Index i = 0; i < at.cols(); ++i) {
      const double* a = at.col(i).data();
      double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
      Eigen::Index k = 0;
      for (; k + 4 <= n; k += 4) {
        s0 += a[k] * b[k];
        s1 += a[k + 1] * b[k + 1];
        s2 += a[k + 2] * b[k + 2];
        s3 += a[k + 3] * b[k + 3];
      }
      for (; k < n; ++k) s0 += a[k] * b[k];
      out(i, j) = (s0 + s1) + (s2 + s3);
    }
  }
  return out;
}

Vector row_norms(const Matrix& x) {
  Vector d(x.rows());
  const Matrix g = gram(x, x);
  for (Eigen::Index i = 0; i < x.rows(); ++i) d(i) = g(i, i);
  return d;
}

Vector row_norms_fast(const Matrix& x) { return x.rowwise().squaredNorm(); }

struct Recursion {
  Matrix c1;
  Matrix c0;
  Matrix ntk;
  Vector da;
  Vector db;
};

// Arc-cosine expectation E[relu(u) relu(v)] for preactivation variances a, b
// and covariance c. The cosine is clamped to [-1, 1] before acos.
inline double relu_expect(double a, double b, double c, double* theta_out) {
  const double s = std::sqrt(a * b);
  double cosv = s > 0.0 ? c / s : 0.0;
  cosv = std::clamp(cosv, -1.0, 1.0);
  const double th = std::acos(cosv);
  if (theta_out) *theta_out = th;
  return s / (2.0 * std::numbers::pi) *
         ((std::numbers::pi - th) * cosv + std::sin(th));
}

// Layer recursion. Preactivation covariances at layer l are m * K^{l-1}; the
// diagonal factors use m1_{t,t} and m1_{t',t'}, the cross terms m1 or m0 of
// the pair. With with_ntk the NTK recursion Q^l = K^l + m1 Kdot^l Q^{l-1} is
// carried along (meaningful for m = sigma^2).
Recursion recurse(const Matrix& xa, const Matrix& xb, const KernelConfig& cfg, double maa,
                  double mbb, double m1, double m0, bool with_ntk) {
  const double n0 = static_cast<double>(cfg.input_dim);
  Recursion r;
  r.c1 = gram(xa, xb) / n0;
  r.c0 = r.c1;
  r.da = row_norms(xa) / n0;
  r.db = row_norms(xb) / n0;
  if (with_ntk) r.ntk = r.c1;
  for (int l = 0; l < cfg.depth; ++l) {
    const Vector a = maa * r.da;
    const Vector b = mbb * r.db;
    if (cfg.nonlinearity == Nonlinearity::Linear) {
      r.c1 *= m1;
      r.c0 *= m0;
      if (with_ntk) r.ntk = r.c1 + m1 * r.ntk;
      r.da = a;
      r.db = b;
      continue;
    }
    for (Eigen::Index j = 0; j < r.c1.cols(); ++j) {
      for (Eigen::Index i = 0; i < r.c1.rows(); ++i) {
        double th = 0.0;
        const double k1 = relu_expect(a(i), b(j), m1 * r.c1(i, j), &th);
        r.c0(i, j) = relu_expect(a(i), b(j), m0 * r.c0(i, j), nullptr);
        r.c1(i, j) = k1;
        if (with_ntk) {
          const double kdot = (std::numbers::pi - th) / (2.0 * std::numbers::pi);
          r.ntk(i, j) = k1 + m1 * kdot * r.ntk(i, j);
        }
      }
    }
    r.da = 0.5 * a;
    r.db = 0.5 * b;
  }
  return r;
}

}  // namespace

KernelSet gp_kernel(const Matrix& xa, const Matrix& xb, int t, int t_prime,
                    const KernelConfig& cfg) {
  check_inputs(xa, xb, cfg);
  const TemporalFactors f = temporal_factors(t, t_prime, cfg);
  const double maa = temporal_factors(t, t, cfg).m1;
  const double mbb = temporal_factors(t_prime, t_prime, cfg).m1;
  KernelSet ks;
  ks.t = t;
  ks.t_prime = t_prime;
  const bool scaled = cfg.lambda.is_infinite() && std::min(t, t_prime) >= 2;
  Recursion r = recurse(xa, xb, cfg, maa, mbb, f.m1, f.m0, scaled);
  ks.k1 = std::move(r.c1);
  if (scaled) {
    ks.k0 = ks.k1;
    ks.lambda_scaled = true;
    ks.ktilde = std::move(r.ntk);
    ks.kdelta = (ks.ktilde - ks.k1) / cfg.sigma_sq;
  } else {
    ks.k0 = f.m0 == 0.0 ? Matrix::Zero(xa.rows(), xb.rows()) : std::move(r.c0);
    ks.ktilde = f.m1 * ks.k1 - f.m0 * ks.k0;
    ks.kdelta = ks.k1 - ks.k0;
  }
  return ks;
}

Matrix gp_matrix(const Matrix& xa, const Matrix& xb, const KernelConfig& cfg) {
  check_inputs(xa, xb, cfg);
  const double s2 = cfg.sigma_sq;
  return recurse(xa, xb, cfg, s2, s2, s2, s2, false).c1;
}

Matrix ntk_kernel(const Matrix& xa, const Matrix& xb, const KernelConfig& cfg) {
  if (!cfg.lambda.is_infinite()) {
    throw Error("ntk_kernel: requires lambda = Infinite (use gp_kernel ktilde for finite lambda)");
  }
  check_inputs(xa, xb, cfg);
  const double s2 = cfg.sigma_sq;
  return recurse(xa, xb, cfg, s2, s2, s2, s2, true).ntk;
}

Vector gp_diagonal(const Matrix& x, int t, const KernelConfig& cfg) {
  cfg.validate();
  if (x.cols() != cfg.input_dim) throw Error("kernel: input column count differs from N0");
  const double m = temporal_factors(t, t, cfg).m1;
  Vector d = row_norms_fast(x) / static_cast<double>(cfg.input_dim);
  const double step = cfg.nonlinearity == Nonlinearity::Linear ? m : 0.5 * m;
  for (int l = 0; l < cfg.depth; ++l) d *= step;
  return d;
}

double max_normalized_error(const Matrix& est, const Matrix& ref, const Vector& diag_a,
                            const Vector& diag_b) {
  double worst = 0.0;
  for (Eigen::Index j = 0; j < ref.cols(); ++j) {
    for (Eigen::Index i = 0; i < ref.rows(); ++i) {
      const double scale = std::sqrt(diag_a(i) * diag_b(j));
      if (scale > 0.0) worst = std::max(worst, std::abs(est(i, j) - ref(i, j)) / scale);
    }
  }
  return worst;
}

}  // namespace cltheory
