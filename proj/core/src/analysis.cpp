#include "cltheory/analysis.hpp"

#include <Eigen/QR>
#include <unsupported/Eigen/NonLinearOptimization>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace cltheory {

namespace {

// Residuals r_i = f_max (1 - exp(-(t_i - 1) / tau)) - F_i in (f_max, log tau).
struct ExpFunctor {
  using Scalar = double;
  using InputType = Eigen::VectorXd;
  using ValueType = Eigen::VectorXd;
  using JacobianType = Eigen::MatrixXd;
  enum { InputsAtCompileTime = Eigen::Dynamic, ValuesAtCompileTime = Eigen::Dynamic };

  const Vector& t;
  const Vector& f;

  int inputs() const { return 2; }
  int values() const { return static_cast<int>(t.size()); }

  int operator()(const Eigen::VectorXd& p, Eigen::VectorXd& r) const {
    const double tau = std::exp(p(1));
    for (Eigen::Index i = 0; i < t.size(); ++i) r(i) = p(0) * (1.0 - std::exp(-(t(i) - 1.0) / tau)) - f(i);
    return 0;
  }

  int df(const Eigen::VectorXd& p, Eigen::MatrixXd& j) const {
    const double tau = std::exp(p(1));
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      const double s = (t(i) - 1.0) / tau;
      const double e = std::exp(-s);
      j(i, 0) = 1.0 - e;
      j(i, 1) = -p(0) * e * s;
    }
    return 0;
  }
};

double sse(const Vector& t, const Vector& f, double f_max, double tau) {
  const Vector r = f_max * (1.0 - (-(t.array() - 1.0) / tau).exp()).matrix() - f;
  return r.squaredNorm();
}

// Optimal f_max for a fixed tau, clamped at 0.
double best_amplitude(const Vector& t, const Vector& f, double tau) {
  const Vector g = (1.0 - (-(t.array() - 1.0) / tau).exp()).matrix();
  const double gg = g.squaredNorm();
  return gg > 0.0 ? std::max(0.0, g.dot(f) / gg) : 0.0;
}

double r_squared(const Vector& y, const Matrix& cols) {
  const Eigen::Index n = y.size();
  Matrix design(n, cols.cols() + 1);
  design.col(0).setOnes();
  design.rightCols(cols.cols()) = cols;
  const Vector beta = design.colPivHouseholderQr().solve(y);
  const double ss_res = (y - design * beta).squaredNorm();
  const double ss_tot = (y.array() - y.mean()).matrix().squaredNorm();
  return 1.0 - ss_res / ss_tot;
}

}  // namespace

ExponentialFit fit_exponential(const std::vector<std::pair<double, double>>& series) {
  if (series.size() < 3) throw Error("fit_exponential: need at least 3 points");
  for (const auto& [t, v] : series) {
    if (!std::isfinite(t) || !std::isfinite(v)) throw Error("fit_exponential: non-finite point");
  }
  // Truncate at the maximum when the series is not monotone non-decreasing.
  std::size_t keep = series.size();
  const bool monotone = std::is_sorted(series.begin(), series.end(),
                                       [](const auto& a, const auto& b) { return a.second < b.second; });
  if (!monotone) {
    const auto it = std::max_element(series.begin(), series.end(),
                                     [](const auto& a, const auto& b) { return a.second < b.second; });
    keep = static_cast<std::size_t>(it - series.begin()) + 1;
  }
  ExponentialFit out;
  out.points_used = static_cast<int>(keep);
  Vector t(static_cast<Eigen::Index>(keep));
  Vector f(static_cast<Eigen::Index>(keep));
  for (std::size_t i = 0; i < keep; ++i) {
    t(static_cast<Eigen::Index>(i)) = series[i].first;
    f(static_cast<Eigen::Index>(i)) = series[i].second;
  }
  if (f.cwiseAbs().maxCoeff() == 0.0) {
    out.tau_undefined = true;
    out.tau = std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  if (keep < 3) throw Error("fit_exponential: fewer than 3 points remain after truncation");

  double best = std::numeric_limits<double>::infinity();
  bool converged = false;
  for (const double tau0 : std::array<double, 4>{0.5, 2.0, 8.0, 32.0}) {
    Eigen::VectorXd p(2);
    p << best_amplitude(t, f, tau0), std::log(tau0);
    ExpFunctor fn{t, f};
    Eigen::LevenbergMarquardt<ExpFunctor> lm(fn);
    lm.parameters.xtol = 1e-15;
    lm.parameters.ftol = 1e-15;
    lm.parameters.maxfev = 2000;
    lm.minimize(p);
    if (!p.allFinite()) continue;
    double fm = p(0);
    const double tau = std::exp(p(1));
    if (!(tau > 0.0) || !std::isfinite(tau)) continue;
    if (fm < 0.0) fm = best_amplitude(t, f, tau);
    const double r = sse(t, f, fm, tau);
    converged = true;
    if (r < best) {
      best = r;
      out.f_max = fm;
      out.tau = tau;
      out.residual = r;
    }
  }
  if (!converged) throw Error("fit_exponential: no start converged");
  return out;
}

PveResult pve(const Vector& dependent, const Matrix& ops_table, double min_r2) {
  static const std::array<const char*, 3> kNames{"gamma_feature", "gamma_rf", "gamma_rule"};
  if (ops_table.cols() != 3) throw Error("pve: OP table must have 3 columns");
  if (dependent.size() != ops_table.rows()) throw Error("pve: row count mismatch");
  if (dependent.size() < 5) throw Error("pve: need at least 5 rows");
  if (!dependent.allFinite() || !ops_table.allFinite()) throw Error("pve: non-finite input");
  const double ss_tot = (dependent.array() - dependent.mean()).matrix().squaredNorm();
  if (!(ss_tot > 0.0)) throw Error("pve: dependent variable is constant");

  std::vector<int> active;
  for (int j = 0; j < 3; ++j) {
    const auto c = ops_table.col(j);
    const double range = c.maxCoeff() - c.minCoeff();
    const double scale = std::max(1.0, c.cwiseAbs().maxCoeff());
    if (range > 1e-12 * scale) active.push_back(j);
  }
  const auto cols_of = [&](const std::vector<int>& idx) {
    Matrix m(ops_table.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) m.col(static_cast<Eigen::Index>(k)) = ops_table.col(idx[k]);
    return m;
  };
  PveResult out;
  out.r2_full = active.empty() ? 0.0 : std::max(0.0, r_squared(dependent, cols_of(active)));
  if (out.r2_full < min_r2) {
    throw Error("pve: full-model R^2 " + std::to_string(out.r2_full) +
                " is below the minimum; dependent unrelated to OPs");
  }
  std::array<double, 3> raw{0.0, 0.0, 0.0};
  for (const int j : active) {
    std::vector<int> reduced;
    for (const int k : active)
      if (k != j) reduced.push_back(k);
    const double r2_red = reduced.empty() ? 0.0 : r_squared(dependent, cols_of(reduced));
    raw[static_cast<std::size_t>(j)] = std::max(0.0, (out.r2_full - r2_red) / out.r2_full);
  }
  const double total = raw[0] + raw[1] + raw[2];
  out.normalized = total > 0.0;
  for (std::size_t j = 0; j < 3; ++j) out.pve[kNames[j]] = out.normalized ? raw[j] / total : 0.0;
  return out;
}

double estimate_alpha_c(const std::vector<std::pair<double, double>>& curve, AlphaCMethod method,
                        double onset_tol) {
  std::vector<double> a;
  std::vector<double> v;
  for (const auto& [alpha, value] : curve) {
    if (alpha <= 1.0) continue;
    if (!a.empty() && alpha <= a.back()) throw Error("estimate_alpha_c: alpha grid must increase");
    a.push_back(alpha);
    v.push_back(value);
  }
  if (a.size() < 5) throw Error("estimate_alpha_c: need at least 5 grid points with alpha > 1");
  const double vmax = *std::max_element(v.begin(), v.end());
  const double vmin = *std::min_element(v.begin(), v.end());
  if (!(vmax - vmin > 1e-12 * std::max(1.0, std::abs(vmax)))) {
    throw Error("estimate_alpha_c: flat curve, no transition detected");
  }
  const std::size_t n = a.size();
  switch (method) {
    case AlphaCMethod::SteepestF21: {
      std::size_t best = 0;
      double best_slope = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t lo = i == 0 ? 0 : i - 1;
        const std::size_t hi = i + 1 == n ? n - 1 : i + 1;
        const double slope = std::abs((v[hi] - v[lo]) / (a[hi] - a[lo]));
        if (slope > best_slope) {
          best_slope = slope;
          best = i;
        }
      }
      return a[best];
    }
    case AlphaCMethod::GMidpoint: {
      const double mid = 0.5 * (vmax + vmin);
      for (std::size_t i = 1; i < n; ++i) {
        const double d0 = v[i - 1] - mid;
        const double d1 = v[i] - mid;
        if (d0 == 0.0) return a[i - 1];
        if ((d0 < 0.0) != (d1 < 0.0)) return a[i - 1] + (a[i] - a[i - 1]) * d0 / (d0 - d1);
      }
      throw Error("estimate_alpha_c: no midpoint crossing");
    }
    case AlphaCMethod::Onset: {
      const double thr = onset_tol * std::max(std::abs(vmax), std::abs(vmin));
      if (std::abs(v[0]) > thr) throw Error("estimate_alpha_c: curve already above onset at first point");
      for (std::size_t i = 1; i < n; ++i)
        if (std::abs(v[i]) > thr) return 0.5 * (a[i - 1] + a[i]);
      throw Error("estimate_alpha_c: no onset detected");
    }
  }
  throw Error("estimate_alpha_c: unknown method");
}

}  // namespace cltheory
