#include "cltheory/multi_head.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>

namespace cltheory {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

KernelConfig one_layer(const KernelConfig& cfg) {
  KernelConfig c = cfg;
  if (c.depth != 1) throw Error("multi-head: the renormalization theory requires depth L = 1");
  c.validate();
  return c;
}

KernelConfig stationary(const KernelConfig& cfg) {
  KernelConfig c = cfg;
  c.lambda = Lambda::infinite();
  return c;
}

// Positive root of u^2/s2 - (1 - alpha) u - q = 0, written to avoid
// cancellation for alpha > 1.
double positive_root(double q, double s2, double alpha) {
  if (!(q >= 0.0)) throw Error("multi-head: negative quadratic form in the u11 equation");
  const double b = 1.0 - alpha;
  const double disc = std::sqrt(b * b + 4.0 * q / s2);
  if (b >= 0.0) return 0.5 * s2 * (b + disc);
  if (disc - b <= 0.0) throw Error("multi-head: u11 equation has no positive root");
  return 2.0 * q / (disc - b);
}

// Stationary (lambda = Infinite) kernels and the 1/N-scaled scalars of the
// reduced equations.
struct Stationary {
  Matrix k11, k12, k22;
  SpdSolver s11, s22;
  Vector a1;  // K11^{-1} Y1
  Vector b1;  // K21 K11^{-1} Y1
  double p = 0.0;
  // Values per example (multiply by alpha for the 1/N-scaled forms).
  double q1 = 0.0, q2 = 0.0, b = 0.0, c = 0.0, g = 0.0;
};

Stationary make_stationary(const Dataset& d1, const Dataset& d2, const KernelConfig& cfg) {
  const KernelConfig sc = stationary(cfg);
  Stationary st;
  st.k11 = gp_matrix(d1.x, d1.x, sc);
  st.k12 = gp_matrix(d1.x, d2.x, sc);
  st.k22 = gp_matrix(d2.x, d2.x, sc);
  st.s11 = SpdSolver(st.k11);
  st.s22 = SpdSolver(st.k22);
  st.p = static_cast<double>(d1.size());
  st.a1 = st.s11.solve(d1.y);
  st.b1 = st.k12.transpose() * st.a1;
  const Vector m_b1 = st.s22.solve(st.b1);
  st.q1 = d1.y.dot(st.a1) / st.p;
  st.q2 = inv_quad(st.s22, d2.y) / st.p;
  st.b = d2.y.dot(m_b1) / st.p;
  st.c = st.b1.dot(m_b1) / st.p;
  const Matrix a = st.s11.solve(st.k12);
  const Matrix bm = st.s22.solve(Matrix(st.k12.transpose()));
  st.g = bm.transpose().cwiseProduct(a).sum() / st.p;
  return st;
}

// Leading-order solution at lambda = Infinite.
struct Branch {
  Regime regime = Regime::FR;
  double u11 = 0.0;
  double u12 = 0.0;
  double u0 = 0.0;   // OF: coefficient of lambda^{1/2}
  double gap = 0.0;  // OF: coefficient of lambda^{-1/2}; G: of lambda^{-1}
  double omega = 0.0;
  double eta = 0.0;  // 1/S in G, 0 otherwise
};

double omega_of(const Stationary& st, double alpha, double u11) {
  const double q2 = alpha * st.q2, b = alpha * st.b, c = alpha * st.c, g = alpha * st.g;
  if (!(q2 > 0.0)) throw Error("multi-head: task-2 labels give a zero quadratic form");
  return b * b / (u11 * q2) + g - c / u11;
}

Branch infinite_branch(const Stationary& st, double alpha, double s2, FrCoupling fr) {
  Branch br;
  br.u11 = positive_root(alpha * st.q1, s2, alpha);
  const double u11 = br.u11;
  const double q2 = alpha * st.q2, b = alpha * st.b, c = alpha * st.c, g = alpha * st.g;
  if (alpha < 1.0) {
    br.regime = Regime::FR;
    br.gap = s2 * (1.0 - alpha);
    if (fr == FrCoupling::Coupled) {
      br.u12 = b / (1.0 - g + c / u11);
      const double v = br.u12;
      const double rem = q2 - 2.0 * v * b / u11 + v * v * c / (u11 * u11);
      br.u0 = (v * v * (1.0 - g) / u11 + rem) / (1.0 - alpha);
    } else {
      br.u0 = q2 / (1.0 - alpha);
    }
    return br;
  }
  br.omega = omega_of(st, alpha, u11);
  const double sa = std::sqrt(alpha);
  if (br.omega < sa) {
    br.regime = Regime::OF;
    const double d = sa - g + c / u11;
    br.u12 = b / d;
    const double v = br.u12;
    const double x = s2 * (v * v * d - 2.0 * v * b + u11 * q2) / (sa * u11);
    const double excess = sa - 1.0;
    br.u0 = std::sqrt(std::max(0.0, x * s2 * excess));
    br.gap = excess > 0.0 ? std::sqrt(x / (s2 * excess)) : kInf;
    return br;
  }
  br.regime = Regime::G;
  if (b == 0.0) throw Error("multi-head: generalization branch requires a nonzero task overlap B");
  br.u12 = u11 * q2 / b;
  const double w = br.omega;
  br.gap = br.u12 * br.u12 * w / (u11 * (w * w - alpha));
  br.u0 = (w - 1.0) * br.gap;
  br.eta = 1.0 / (w * br.gap);
  return br;
}

// Kernels of the finite-lambda theory (or of the magnitude model at an
// effective penalty) and the associated block system.
struct QueryKernels {
  Matrix k1_x1;  // K^1_{2,1}(x, X1)
  Matrix k1_x2;  // K^1_{2,2}(x, X2)
  Matrix k0_x2;  // K^0_{2,2}(x, X2)
  Vector diag;   // K^1_{2,2}(x, x)
};

struct BlockModel {
  double u11 = 0.0, u12 = 0.0, u1 = 0.0, u0 = 0.0;
  Matrix k11, k12, k1, k0;
  std::function<QueryKernels(const Matrix&)> query;
  std::function<Matrix(const Matrix&, const Matrix&)> prior22;
  Matrix ainv;
  Vector mean;  // A^{-1} B
  Eigen::Index p = 0;

  void assemble(const Vector& y1, const Vector& y2) {
    p = k11.rows();
    const Matrix kt = u1 * k1 - u0 * k0;
    Matrix a = Matrix::Zero(3 * p, 3 * p);
    a.block(0, 0, p, p) = u11 * k11;
    a.block(0, 2 * p, p, p) = u12 * k12;
    a.block(2 * p, 0, p, p) = u12 * k12.transpose();
    a.block(p, 2 * p, p, p) = kt;
    a.block(2 * p, p, p, p) = kt;
    a.block(2 * p, 2 * p, p, p) = u0 * k0 - kt;
    Vector bvec = Vector::Zero(3 * p);
    bvec.head(p) = y1;
    bvec.tail(p) = y2;
    const Eigen::PartialPivLU<Matrix> lu(a);
    ainv = lu.inverse();
    mean = ainv * bvec;
  }

  // Coefficient rows c(x)^T for head 1 and head 2, one query per column.
  std::array<Matrix, 2> coefficients(const QueryKernels& q) const {
    const Matrix dk = q.k1_x2 - q.k0_x2;
    Matrix c1(3 * p, q.diag.size());
    c1.topRows(p) = u11 * q.k1_x1.transpose();
    c1.middleRows(p, p) = u12 * dk.transpose();
    c1.bottomRows(p) = u12 * q.k0_x2.transpose();
    Matrix c2(3 * p, q.diag.size());
    c2.topRows(p) = u12 * q.k1_x1.transpose();
    c2.middleRows(p, p) = (u1 * q.k1_x2 - u0 * q.k0_x2).transpose();
    c2.bottomRows(p) = u0 * q.k0_x2.transpose();
    return {c1, c2};
  }

  HeadPair means(const Matrix& xq) const {
    const auto c = coefficients(query(xq));
    return {c[0].transpose() * mean, c[1].transpose() * mean};
  }

  HeadPair variances(const Matrix& xq) const {
    const QueryKernels q = query(xq);
    const auto c = coefficients(q);
    HeadPair out;
    out.head1.resize(q.diag.size());
    out.head2.resize(q.diag.size());
    const Matrix s1 = ainv * c[0];
    const Matrix s2 = ainv * c[1];
    for (Eigen::Index i = 0; i < q.diag.size(); ++i) {
      out.head1(i) = u11 * q.diag(i) - c[0].col(i).dot(s1.col(i));
      out.head2(i) = u1 * q.diag(i) - c[1].col(i).dot(s2.col(i));
    }
    return out;
  }

  HiddenKernel hidden(const Matrix& xa, const Matrix& xb, double n) const {
    const QueryKernels qa = query(xa);
    const QueryKernels qb = query(xb);
    const Matrix second = ainv - mean * mean.transpose();
    const auto blk = [&](const Matrix& m, int i, int j) { return m.block(i * p, j * p, p, p); };
    const Matrix v1v1 = blk(second, 0, 0), v2v2 = blk(second, 1, 1);
    const Matrix v1v2 = blk(second, 0, 1), v2v1 = blk(second, 1, 0);
    const Matrix dvdp = blk(ainv, 1, 2);
    const Matrix dka = qa.k1_x2 - qa.k0_x2;
    const Matrix dkb = qb.k1_x2 - qb.k0_x2;
    Matrix learned = u11 * qa.k1_x1 * v1v1 * qb.k1_x1.transpose();
    learned += u0 * dka * v2v2 * dkb.transpose();
    learned += u12 * qa.k1_x1 * v1v2 * dkb.transpose();
    learned += u12 * dka * v2v1 * qb.k1_x1.transpose();
    learned += u0 * qa.k0_x2 * dvdp * dkb.transpose();
    learned += u0 * dka * dvdp * qb.k0_x2.transpose();
    learned += (u1 - u0) * (qa.k1_x2 * v2v2 * qb.k1_x2.transpose() -
                            qa.k0_x2 * v2v2 * qb.k0_x2.transpose());
    HiddenKernel out;
    out.k_learned = -learned / n;
    out.k_sim = prior22(xa, xb) + out.k_learned;
    return out;
  }
};

// Finite-lambda kernels with the fixed-point maps of the reduced equations.
struct FiniteSystem {
  Matrix k11, k12, k1, k0, dk, s;
  Vector b1, y2;
  double n = 0.0, s2 = 1.0, u11 = 0.0;

  struct State {
    double u12 = 0.0, gap = 1.0, u0 = 0.0;
  };

  // Returns false when the map leaves the admissible region.
  bool map(const State& z, State* out) const {
    const double u1 = z.u0 + z.gap;
    const Matrix kt = u1 * k1 - z.u0 * k0;
    Eigen::LLT<Matrix> llt(kt);
    if (llt.info() != Eigen::Success) return false;
    const Matrix m = llt.solve(Matrix::Identity(kt.rows(), kt.cols()));
    const double tr_sm = s.cwiseProduct(m).sum();
    const Vector mb = m * b1;
    const double b_my = mb.dot(y2);
    const double b_mb = mb.dot(b1);
    const double c = z.u12 * z.u12 / u11;
    const Vector r = y2 - (z.u12 / u11) * b1;
    const Vector mr = m * r;
    const Matrix mdk = m * dk;
    const Matrix mk0 = m * k0;
    const double tr_mk1 = m.cwiseProduct(k1).sum();
    const double tr_mdk_mk0 = mdk.cwiseProduct(mk0.transpose()).sum();
    const double tr_s_mdkm = s.cwiseProduct(mdk * m).sum();
    const double tr_mk0_mk0 = mk0.cwiseProduct(mk0.transpose()).sum();
    const double tr_s_mk0m = s.cwiseProduct(mk0 * m).sum();
    const double denom = 1.0 / z.gap - tr_sm / n + b_mb / (n * u11);
    const double inv_gap = 1.0 / s2 + tr_mk1 / n - z.u0 * tr_mdk_mk0 / n + c * tr_s_mdkm / n -
                           mr.dot(dk * mr) / n;
    const double u0 = c + z.gap * z.gap *
                              (z.u0 * tr_mk0_mk0 / n - c * tr_s_mk0m / n + mr.dot(k0 * mr) / n);
    if (!(inv_gap > 0.0) || !(u0 > 0.0) || denom == 0.0 || !std::isfinite(u0)) return false;
    out->u12 = (b_my / n) / denom;
    out->gap = 1.0 / inv_gap;
    out->u0 = u0;
    return true;
  }
};

double rel_change(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300});
}

double state_residual(const FiniteSystem::State& a, const FiniteSystem::State& b) {
  return std::max({rel_change(a.u12, b.u12), rel_change(a.gap, b.gap), rel_change(a.u0, b.u0)});
}

// Newton iteration on (u12, log gap, log u0) with a finite-difference Jacobian.
bool newton_solve(const FiniteSystem& sys, FiniteSystem::State* z, double tol, int* iters,
                  double* res_out) {
  using State = FiniteSystem::State;
  const auto to_vec = [](const State& s) {
    return Eigen::Vector3d(s.u12, std::log(s.gap), std::log(s.u0));
  };
  const auto to_state = [](const Eigen::Vector3d& v) {
    State s;
    s.u12 = v(0);
    s.gap = std::exp(v(1));
    s.u0 = std::exp(v(2));
    return s;
  };
  const auto residual = [&](const Eigen::Vector3d& v, Eigen::Vector3d* r) {
    State img;
    if (!sys.map(to_state(v), &img)) return false;
    const Eigen::Vector3d w = to_vec(img);
    *r = w - v;
    r->x() /= std::max(std::abs(img.u12), 1e-12);
    return r->allFinite();
  };
  Eigen::Vector3d x = to_vec(*z);
  Eigen::Vector3d r;
  if (!residual(x, &r)) return false;
  for (int it = 0; it < 200; ++it) {
    ++*iters;
    *res_out = r.cwiseAbs().maxCoeff();
    if (*res_out < tol) {
      *z = to_state(x);
      return true;
    }
    Eigen::Matrix3d jac;
    for (int k = 0; k < 3; ++k) {
      Eigen::Vector3d xp = x;
      const double h = 1e-7 * std::max(1.0, std::abs(x(k)));
      xp(k) += h;
      Eigen::Vector3d rp;
      if (!residual(xp, &rp)) return false;
      jac.col(k) = (rp - r) / h;
    }
    const Eigen::Vector3d step = jac.fullPivLu().solve(-r);
    if (!step.allFinite()) return false;
    double t = 1.0;
    bool moved = false;
    for (int ls = 0; ls < 40; ++ls, t *= 0.5) {
      Eigen::Vector3d rn;
      const Eigen::Vector3d xn = x + t * step;
      if (residual(xn, &rn) && rn.cwiseAbs().maxCoeff() < (1.0 - 1e-4 * t) * r.cwiseAbs().maxCoeff()) {
        x = xn;
        r = rn;
        moved = true;
        break;
      }
    }
    if (!moved) return false;
  }
  return false;
}

}  // namespace

struct MultiHeadSolution::Impl {
  Dataset d1, d2;
  KernelConfig cfg;
  MultiHeadOptions opts;
  double alpha = 0.0;
  double n = 0.0;
  bool empty = false;
  Stationary st;
  Branch br;
  Vector r;  // Y2 - (u12/u11) K21 K11^{-1} Y1 with stationary kernels
  BlockModel block;
  // At lambda = Infinite the block system is only needed for hidden-layer
  // kernels and is assembled on request.
  std::function<BlockModel()> deferred_block;
};

MultiHeadSolution::MultiHeadSolution(std::shared_ptr<const Impl> impl) : impl_(std::move(impl)) {}

const Dataset& MultiHeadSolution::task1() const { return impl_->d1; }
const Dataset& MultiHeadSolution::task2() const { return impl_->d2; }
const KernelConfig& MultiHeadSolution::config() const { return impl_->cfg; }
double MultiHeadSolution::width() const { return impl_->n; }

double solve_u11(const Dataset& d1, const KernelConfig& cfg, double alpha) {
  if (!(alpha > 0.0)) throw Error("multi-head: alpha must be > 0");
  d1.validate();
  const KernelConfig sc = stationary(one_layer(cfg));
  const SpdSolver s11(gp_matrix(d1.x, d1.x, sc));
  const double q = alpha * inv_quad(s11, d1.y) / static_cast<double>(d1.size());
  return positive_root(q, cfg.sigma_sq, alpha);
}

namespace {

BlockModel magnitude_model(const Stationary& st, const Dataset& d1, const Dataset& d2,
                           const KernelConfig& cfg, double u11, double u12, double u1, double u0,
                           double eps) {
  const KernelConfig sc = stationary(cfg);
  BlockModel bm;
  bm.u11 = u11;
  bm.u12 = u12;
  bm.u1 = u1;
  bm.u0 = u0;
  bm.k11 = st.k11;
  bm.k12 = st.k12;
  bm.k1 = st.k22;
  bm.k0 = (1.0 - eps) * st.k22;
  const Matrix x1 = d1.x, x2 = d2.x;
  bm.query = [sc, x1, x2, eps](const Matrix& xq) {
    QueryKernels q;
    q.k1_x1 = gp_matrix(xq, x1, sc);
    q.k1_x2 = gp_matrix(xq, x2, sc);
    q.k0_x2 = (1.0 - eps) * q.k1_x2;
    q.diag = gp_diagonal(xq, 2, sc);
    return q;
  };
  bm.prior22 = [sc](const Matrix& a, const Matrix& b) { return gp_matrix(a, b, sc); };
  bm.assemble(d1.y, d2.y);
  return bm;
}

}  // namespace

MultiHeadSolution solve_multi_head(const Dataset& d1, const Dataset& d2, const KernelConfig& cfg_in,
                                   double alpha, const MultiHeadOptions& opts) {
  const KernelConfig cfg = one_layer(cfg_in);
  if (!(alpha > 0.0)) throw Error("multi-head: alpha must be > 0");
  d1.validate();
  d2.validate();
  if (d1.size() != d2.size()) throw Error("multi-head: tasks must have the same P");
  if (d1.input_dim() != cfg.input_dim || d2.input_dim() != cfg.input_dim) {
    throw Error("multi-head: dataset N0 differs from config");
  }
  auto im = std::make_shared<MultiHeadSolution::Impl>();
  im->d1 = d1;
  im->d2 = d2;
  im->cfg = cfg;
  im->opts = opts;
  im->alpha = alpha;
  const double s2 = cfg.sigma_sq;
  RenormFactors f;
  f.alpha = alpha;
  f.lambda = cfg.lambda;

  if (d1.size() == 0) {
    // No data: the prior, with readout norms at their prior value.
    im->empty = true;
    im->n = kInf;
    f.u11 = s2;
    f.u22_1 = s2;
    f.gap = s2;
    f.regime = Regime::FR;
    MultiHeadSolution out(im);
    out.factors_ = f;
    return out;
  }

  im->n = static_cast<double>(d1.size()) / alpha;
  im->st = make_stationary(d1, d2, cfg);
  const FrCoupling fr = cfg.lambda.is_infinite() ? opts.fr_coupling : FrCoupling::Coupled;
  im->br = infinite_branch(im->st, alpha, s2, fr);
  const Branch& br = im->br;
  f.u11 = br.u11;
  f.regime = br.regime;

  if (cfg.lambda.is_infinite()) {
    f.u12 = br.u12;
    f.u22_0 = br.u0;
    f.gap = br.gap;
    f.u22_1 = br.regime == Regime::FR ? br.u0 + br.gap : br.u0;
    f.diverging = br.regime == Regime::OF;
    im->r = d2.y - (br.u12 / br.u11) * im->st.b1;
    // Hidden-layer kernels use the magnitude model at an effective penalty.
    const double lam = opts.lambda_eff;
    double gap = br.gap, u0 = br.u0;
    if (br.regime == Regime::OF) {
      u0 = br.u0 * std::sqrt(lam);
      gap = br.gap / std::sqrt(lam);
    } else if (br.regime == Regime::G) {
      gap = br.gap / (s2 * lam);
    }
    const MultiHeadSolution::Impl* raw = im.get();
    const double u11 = br.u11, u12 = br.u12, eps = 1.0 / (s2 * lam);
    im->deferred_block = [raw, u11, u12, u0, gap, eps]() {
      return magnitude_model(raw->st, raw->d1, raw->d2, raw->cfg, u11, u12, u0 + gap, u0, eps);
    };
    MultiHeadSolution out(im);
    out.factors_ = f;
    return out;
  }

  // Finite lambda: damped fixed point on the reduced equations.
  const double lam = cfg.lambda.value();
  FiniteSystem sys;
  sys.k11 = gp_kernel(d1.x, d1.x, 1, 1, cfg).k1;
  sys.k12 = gp_kernel(d1.x, d2.x, 1, 2, cfg).k1;
  const KernelSet k22 = gp_kernel(d2.x, d2.x, 2, 2, cfg);
  sys.k1 = k22.k1;
  sys.k0 = k22.k0;
  sys.dk = k22.k1 - k22.k0;
  const SpdSolver s11(sys.k11);
  const Matrix a12 = s11.solve(sys.k12);
  sys.s = sys.k12.transpose() * a12;
  sys.b1 = sys.k12.transpose() * s11.solve(d1.y);
  sys.y2 = d2.y;
  sys.n = im->n;
  sys.s2 = s2;
  sys.u11 = positive_root(alpha * inv_quad(s11, d1.y) / static_cast<double>(d1.size()), s2, alpha);
  f.u11 = sys.u11;

  FiniteSystem::State z;
  z.u12 = br.u12;
  if (br.regime == Regime::FR) {
    z.gap = br.gap;
    z.u0 = std::max(br.u0, 1e-12);
  } else if (br.regime == Regime::OF && std::isfinite(br.gap)) {
    z.gap = br.gap / std::sqrt(lam);
    z.u0 = std::max(br.u0 * std::sqrt(lam), 1e-12);
  } else if (br.regime == Regime::G) {
    z.gap = br.gap / (s2 * lam);
    z.u0 = std::max(br.u0, 1e-12);
  } else {
    z.gap = 1e-2 * s2;
    z.u0 = 1.0;
  }

  int iters = 0;
  double res = kInf;
  double best = kInf;
  int since_best = 0;
  bool converged = false;
  while (iters < opts.max_iterations) {
    FiniteSystem::State img;
    if (!sys.map(z, &img)) break;
    res = state_residual(z, img);
    ++iters;
    if (res < opts.tolerance) {
      z = img;
      converged = true;
      break;
    }
    // Give up on the plain iteration when it stalls.
    if (res < 0.5 * best) {
      best = res;
      since_best = 0;
    } else if (++since_best > 200) {
      break;
    }
    const double d = opts.damping;
    z.u12 = (1.0 - d) * z.u12 + d * img.u12;
    z.gap = 1.0 / ((1.0 - d) / z.gap + d / img.gap);
    z.u0 = (1.0 - d) * z.u0 + d * img.u0;
  }
  if (!converged) {
    FiniteSystem::State zn = z;
    double nres = res;
    if (newton_solve(sys, &zn, opts.tolerance, &iters, &nres)) {
      z = zn;
      res = nres;
      converged = true;
    }
  }
  if (!converged) {
    throw Error("multi-head: fixed point did not converge (last relative residual " +
                std::to_string(res) + ")");
  }
  f.u12 = z.u12;
  f.gap = z.gap;
  f.u22_0 = z.u0;
  f.u22_1 = z.u0 + z.gap;
  f.iterations = iters;
  f.residual = res;

  BlockModel& bm = im->block;
  bm.u11 = sys.u11;
  bm.u12 = z.u12;
  bm.u1 = f.u22_1;
  bm.u0 = f.u22_0;
  bm.k11 = sys.k11;
  bm.k12 = sys.k12;
  bm.k1 = sys.k1;
  bm.k0 = sys.k0;
  const Matrix x1 = d1.x, x2 = d2.x;
  bm.query = [cfg, x1, x2](const Matrix& xq) {
    QueryKernels q;
    q.k1_x1 = gp_kernel(xq, x1, 2, 1, cfg).k1;
    const KernelSet ks = gp_kernel(xq, x2, 2, 2, cfg);
    q.k1_x2 = ks.k1;
    q.k0_x2 = ks.k0;
    q.diag = gp_diagonal(xq, 2, cfg);
    return q;
  };
  bm.prior22 = [cfg](const Matrix& a, const Matrix& b) { return gp_kernel(a, b, 2, 2, cfg).k1; };
  bm.assemble(d1.y, d2.y);
  im->r = d2.y - (z.u12 / sys.u11) * sys.b1;

  MultiHeadSolution out(im);
  out.factors_ = f;
  return out;
}

RenormFactors solve_renorm(const Dataset& d1, const Dataset& d2, const KernelConfig& cfg,
                           double alpha, const MultiHeadOptions& opts) {
  return solve_multi_head(d1, d2, cfg, alpha, opts).factors();
}

HeadPair MultiHeadSolution::mean_predictors(const Matrix& xq) const {
  const Impl& im = *impl_;
  if (xq.cols() != im.cfg.input_dim) throw Error("multi-head: query column count differs from N0");
  if (im.empty) return {Vector::Zero(xq.rows()), Vector::Zero(xq.rows())};
  if (!im.cfg.lambda.is_infinite()) return im.block.means(xq);
  const KernelConfig sc = stationary(im.cfg);
  const Matrix kx1 = gp_matrix(xq, im.d1.x, sc);
  const Matrix kx2 = gp_matrix(xq, im.d2.x, sc);
  const Vector w = im.st.s22.solve(im.r);
  const Vector base = kx1 * im.st.a1;
  const Vector resid = kx2 * w;
  HeadPair out;
  out.head1 = base + im.br.eta * im.br.u12 * resid;
  out.head2 = resid + (im.br.u12 / im.br.u11) * base;
  return out;
}

HeadPair MultiHeadSolution::predictor_variances(const Matrix& xq) const {
  const Impl& im = *impl_;
  if (xq.cols() != im.cfg.input_dim) throw Error("multi-head: query column count differs from N0");
  const KernelConfig sc = stationary(im.cfg);
  if (im.empty) {
    const Vector d = gp_diagonal(xq, 2, sc);
    return {im.cfg.sigma_sq * d, im.cfg.sigma_sq * d};
  }
  if (!im.cfg.lambda.is_infinite()) return im.block.variances(xq);
  const Branch& br = im.br;
  const Matrix k1 = gp_matrix(im.d1.x, xq, sc);  // P x Q
  const Matrix k2 = gp_matrix(im.d2.x, xq, sc);
  const Vector kxx = gp_diagonal(xq, 2, sc);
  const Matrix m2k2 = im.st.s22.solve(k2);                // K22^{-1} k2
  const Matrix m1k1 = im.st.s11.solve(k1);                // K11^{-1} k1
  const Matrix d = k1 - im.st.k12 * m2k2;                 // k1 - K12 K22^{-1} k2
  const Matrix m1d = im.st.s11.solve(d);
  const Matrix k21m2k2 = im.st.k12.transpose();           // K21
  const Matrix t = im.st.s11.solve(Matrix(im.st.k12 * m2k2));  // K11^{-1} K12 K22^{-1} k2
  const double u1 = br.regime == Regime::FR ? br.u0 + br.gap : br.u0;
  const double rho = br.u12 * br.u12 / br.u11;
  const double eta = br.eta;
  HeadPair out;
  out.head1.resize(xq.rows());
  out.head2.resize(xq.rows());
  for (Eigen::Index i = 0; i < xq.rows(); ++i) {
    const double a_ = k2.col(i).dot(m2k2.col(i));
    const double b_ = m2k2.col(i).dot(k21m2k2 * m1k1.col(i));
    const double e_ = m2k2.col(i).dot(k21m2k2 * t.col(i));
    out.head1(i) = br.u11 * (kxx(i) - k1.col(i).dot(m1k1.col(i))) -
                   br.u12 * br.u12 * eta * (2.0 * a_ - 2.0 * b_ - br.u0 * eta * a_) -
                   std::pow(br.u12, 4) * eta * eta * e_ / br.u11;
    const double post2 = kxx(i) - a_;
    out.head2(i) = br.regime == Regime::OF ? u1 * post2
                                           : u1 * post2 - rho * d.col(i).dot(m1d.col(i));
  }
  return out;
}

HiddenKernel MultiHeadSolution::hidden_kernel(const Matrix& xa, const Matrix& xb) const {
  const Impl& im = *impl_;
  if (xa.cols() != im.cfg.input_dim || xb.cols() != im.cfg.input_dim) {
    throw Error("multi-head: query column count differs from N0");
  }
  if (im.empty) {
    const KernelConfig sc = im.cfg.lambda.is_infinite() ? stationary(im.cfg) : im.cfg;
    HiddenKernel out;
    out.k_sim = gp_kernel(xa, xb, 2, 2, sc).k1;
    out.k_learned = Matrix::Zero(xa.rows(), xb.rows());
    return out;
  }
  if (im.deferred_block) return im.deferred_block().hidden(xa, xb, im.n);
  return im.block.hidden(xa, xb, im.n);
}

Matrix MultiHeadSolution::repr_change(const Matrix& xa, const Matrix& xb) const {
  const Impl& im = *impl_;
  if (!im.cfg.lambda.is_infinite()) throw Error("multi-head: repr_change requires lambda = Infinite");
  if (im.empty || im.br.regime == Regime::FR) return Matrix::Zero(xa.rows(), xb.rows());
  const KernelConfig sc = stationary(im.cfg);
  const Matrix ka = gp_matrix(xa, im.d2.x, sc);
  const Matrix kb = gp_matrix(xb, im.d2.x, sc);
  const Matrix mkb = im.st.s22.solve(Matrix(kb.transpose()));
  if (im.br.regime == Regime::OF) {
    const double sa = std::sqrt(im.alpha);
    const double f = (sa - 1.0) / sa;
    return f * f * ka * mkb;
  }
  const double s = im.br.omega * im.br.gap;
  const double u0 = im.br.u0;
  const Vector w = im.st.s22.solve(im.r);
  const Vector pa = ka * w;
  const Vector pb = kb * w;
  return (u0 / s) * (u0 / s) * ka * mkb + (u0 / (s * s)) * pa * pb.transpose();
}

double MultiHeadSolution::forgetting() const {
  const Impl& im = *impl_;
  if (im.empty) throw Error("multi-head: forgetting undefined without training data");
  return normalized_loss(mean_predictors(im.d1.x).head1, im.d1.y);
}

double MultiHeadSolution::generalization(const Dataset& test2) const {
  const Impl& im = *impl_;
  if (im.empty) throw Error("multi-head: generalization undefined without training data");
  test2.validate();
  const HeadPair mean = mean_predictors(test2.x);
  const HeadPair var = predictor_variances(test2.x);
  const double ysq = test2.y.squaredNorm();
  if (!(ysq > 0.0)) throw Error("multi-head: zero test labels");
  const bool div = impl_->cfg.lambda.is_infinite() && im.br.regime == Regime::OF;
  const double err = div ? var.head2.sum() : (mean.head2 - test2.y).squaredNorm() + var.head2.sum();
  // Reference: task 2 learned alone by a fresh head.
  const KernelConfig sc = stationary(im.cfg);
  const Matrix k2 = gp_matrix(im.d2.x, test2.x, sc);
  const Vector ref_mean = k2.transpose() * im.st.s22.solve(im.d2.y);
  const double u_ref = positive_root(im.alpha * im.st.q2, im.cfg.sigma_sq, im.alpha);
  const Matrix m2k2 = im.st.s22.solve(k2);
  const Vector kxx = gp_diagonal(test2.x, 2, sc);
  double ref = (ref_mean - test2.y).squaredNorm();
  for (Eigen::Index i = 0; i < test2.size(); ++i) ref += u_ref * (kxx(i) - k2.col(i).dot(m2k2.col(i)));
  return (err / ysq) / (ref / ysq);
}

double alpha_c_exact(const Dataset& d1, const Dataset& d2, const KernelConfig& cfg_in) {
  const KernelConfig cfg = one_layer(cfg_in);
  if (d1.size() != d2.size()) throw Error("multi-head: tasks must have the same P");
  const Stationary st = make_stationary(d1, d2, cfg);
  const double s2 = cfg.sigma_sq;
  const auto h = [&](double a) {
    const double u11 = positive_root(a * st.q1, s2, a);
    return omega_of(st, a, u11) / std::sqrt(a) - 1.0;
  };
  double lo = 1.0;
  if (h(lo) >= 0.0) return 1.0;
  double hi = 2.0;
  while (h(hi) < 0.0) {
    lo = hi;
    hi *= 2.0;
    if (hi > 1e8) return kInf;
  }
  for (int i = 0; i < 200 && hi - lo > 1e-12 * hi; ++i) {
    const double mid = 0.5 * (lo + hi);
    (h(mid) < 0.0 ? lo : hi) = mid;
  }
  return hi;
}

}  // namespace cltheory
