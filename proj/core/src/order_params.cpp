#include "cltheory/order_params.hpp"
#include "cltheory/linalg.hpp"

#include <cmath>
#include <limits>

namespace cltheory {

void Dataset::validate() const {
  if (x.rows() != y.size()) throw Error("dataset: X rows and Y length differ");
  if (!x.allFinite() || !y.allFinite()) throw Error("dataset: non-finite entries");
}

std::string to_string(Regime r) {
  switch (r) {
    case Regime::FR: return "FR";
    case Regime::OF: return "OF";
    case Regime::G: return "G";
  }
  return "?";
}

namespace {

KernelConfig stationary(const KernelConfig& cfg, int depth) {
  KernelConfig c = cfg;
  c.lambda = Lambda::infinite();
  c.depth = depth;
  return c;
}

// GP kernel blocks of a task pair with cached factorizations.
struct PairKernels {
  Matrix k12;  // rows X1, cols X2
  SpdSolver s11;
  SpdSolver s22;
  double p = 0.0;

  PairKernels(const Dataset& d1, const Dataset& d2, const KernelConfig& cfg) {
    d1.validate();
    d2.validate();
    if (d1.size() != d2.size()) throw Error("order-params: tasks must have the same P");
    if (d1.size() == 0) throw Error("order-params: empty dataset");
    k12 = gp_matrix(d1.x, d2.x, cfg);
    s11 = SpdSolver(gp_matrix(d1.x, d1.x, cfg));
    s22 = SpdSolver(gp_matrix(d2.x, d2.x, cfg));
    p = static_cast<double>(d1.size());
  }
};

double feature_trace(const PairKernels& k) {
  const Matrix a = k.s11.solve(k.k12);                       // K11^{-1} K12
  const Matrix b = k.s22.solve(Matrix(k.k12.transpose()));  // K22^{-1} K21
  return (b.transpose().cwiseProduct(a)).sum() / k.p;       // Tr(K22^{-1}K21 K11^{-1}K12)
}

}  // namespace

double gamma_feature(const Dataset& d1, const Dataset& d2, const KernelConfig& cfg) {
  const PairKernels k(d1, d2, stationary(cfg, cfg.depth));
  return feature_trace(k);
}

RfRule gamma_rf_rule(const Dataset& d1, const Dataset& d2, const KernelConfig& cfg) {
  const PairKernels k(d1, d2, stationary(cfg, cfg.depth));
  const double n1 = d1.y.norm();
  const double n2 = d2.y.norm();
  if (!(n1 > 0.0) || !(n2 > 0.0)) throw Error("order-params: zero label vector");
  const Matrix& k12 = k.k12;
  const Vector z2 = k12 * k.s22.solve(d2.y);       // K12 K22^{-1} Y2
  const Vector w = k.s11.solve(z2);                // K11^{-1} K12 K22^{-1} Y2
  const Vector mid = k12.transpose() * w;          // K21 K11^{-1} K12 K22^{-1} Y2
  RfRule out;
  out.gamma_rf = 0.5 * (z2.squaredNorm() + mid.squaredNorm()) / (n2 * n2);
  // Y2^T K22^{-1} K21 K12 K22^{-1} K21 K11^{-1} Y1
  const Vector u = k12.transpose() * k.s11.solve(d1.y);  // K21 K11^{-1} Y1
  const Vector v = k12 * k.s22.solve(u);                 // K12 K22^{-1} K21 K11^{-1} Y1
  out.gamma_rule = z2.dot(v) / (n1 * n2);
  return out;
}

double predict_f21(const OrderParameters& ops) { return 2.0 * (ops.gamma_rf - ops.gamma_rule); }

double f21_full(const Dataset& d1, const Dataset& d2, const KernelConfig& cfg) {
  const PairKernels k(d1, d2, stationary(cfg, cfg.depth));
  const double n1sq = d1.y.squaredNorm();
  if (!(n1sq > 0.0)) throw Error("order-params: zero label vector");
  const Vector r = d2.y - k.k12.transpose() * k.s11.solve(d1.y);
  const Vector z = k.k12 * k.s22.solve(r);
  return z.squaredNorm() / n1sq;
}

double gamma_sim(const Dataset& d1, const Dataset& d2, const KernelConfig& cfg) {
  const PairKernels k(d1, d2, stationary(cfg, 1));
  const double q1 = inv_quad(k.s11, d1.y) / k.p;
  const double q2 = inv_quad(k.s22, d2.y) / k.p;
  if (!(q1 > 0.0) || !(q2 > 0.0)) {
    throw Error("order-params: gamma_sim label normalization impossible (zero quadratic form)");
  }
  const Vector y1 = d1.y / std::sqrt(q1);
  const Vector y2 = d2.y / std::sqrt(q2);
  const Vector a1 = k.s11.solve(y1);                // K11^{-1} Y1
  const Vector b = k.s22.solve(Vector(k.k12.transpose() * a1));  // K22^{-1} K21 K11^{-1} Y1
  const double cross = b.dot(y2) / k.p;
  const double proj = (k.k12.transpose() * a1).dot(b) / k.p;
  return feature_trace(k) + cross * cross - proj;
}

Dataset normalize_labels(const Dataset& d, const KernelConfig& cfg) {
  const KernelConfig sc = stationary(cfg, 1);
  const SpdSolver s(gp_matrix(d.x, d.x, sc));
  const double q = inv_quad(s, d.y) / static_cast<double>(d.size());
  if (!(q > 0.0)) throw Error("order-params: cannot normalize a zero label vector");
  Dataset out = d;
  out.y /= std::sqrt(q);
  return out;
}

double alpha_c(double gs) {
  if (gs > 0.0) return 1.0 / (gs * gs);
  return std::numeric_limits<double>::infinity();
}

PhasePoint classify_regime(double alpha, double gs) {
  if (!(alpha > 0.0)) throw Error("classify_regime: alpha must be > 0");
  PhasePoint p;
  p.alpha = alpha;
  p.gamma_sim = gs;
  p.alpha_c = alpha_c(gs);
  if (alpha < 1.0) {
    p.regime = Regime::FR;
  } else if (alpha < p.alpha_c) {
    p.regime = Regime::OF;
  } else {
    p.regime = Regime::G;
  }
  return p;
}

OrderParameters compute_order_params(const Dataset& d1, const Dataset& d2,
                                     const KernelConfig& cfg, bool with_f21_full) {
  OrderParameters ops;
  ops.gamma_feature = gamma_feature(d1, d2, cfg);
  const RfRule rr = gamma_rf_rule(d1, d2, cfg);
  ops.gamma_rf = rr.gamma_rf;
  ops.gamma_rule = rr.gamma_rule;
  ops.conflict = rr.gamma_rf - rr.gamma_rule;
  ops.gamma_sim = gamma_sim(d1, d2, cfg);
  ops.depth_used = cfg.depth;
  ops.pair = d1.task_id + "|" + d2.task_id;
  if (with_f21_full) ops.f21_full = f21_full(d1, d2, cfg);
  return ops;
}

}  // namespace cltheory
