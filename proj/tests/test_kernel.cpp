#include "cltheory/kernel.hpp"
#include "fixtures.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <gtest/gtest.h>

#include <cmath>
#include <functional>

using namespace cltheory;
using cltheory::testing::random_inputs;

namespace {

// Covariances of the causal weight chain W_1 ~ N(0, s2),
// W_t | W_{t-1} ~ N(lt W_{t-1}, s2 (1 - lt)), iterated variance by variance.
// m1 is Cov(W_t, W_t'); m0 is the covariance between chains that agree up to
// time min(t, t') - 1 and evolve independently afterwards.
std::pair<double, double> chain_covariances(int t, int tp, double s2, double lt) {
  const int hi = std::max(t, tp);
  const int lo = std::min(t, tp);
  std::vector<double> var(static_cast<std::size_t>(hi + 1), 0.0);
  var[1] = s2;
  for (int k = 2; k <= hi; ++k) var[k] = lt * lt * var[k - 1] + s2 * (1.0 - lt);
  const double m1 = std::pow(lt, hi - lo) * var[lo];
  if (lo == 1) return {m1, 0.0};
  // Both chains step independently from the shared W_{lo-1}.
  const double m0 = std::pow(lt, hi - lo + 1) * lt * var[lo - 1];
  return {m1, m0};
}

double integrate(const std::function<double(double)>& f, double lo, double hi) {
  using boost::math::quadrature::gauss_kronrod;
  if (!(hi > lo)) return 0.0;
  return gauss_kronrod<double, 61>::integrate(f, lo, hi, 15, 1e-14);
}

double std_normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI); }

// E[g(u) h(v)] for centered Gaussians with variances a, b and covariance c,
// by nested quadrature. g and h vanish for negative arguments, so the
// integration runs over the region where both are positive and the
// integrands are smooth.
double gaussian_expectation(double a, double b, double c, const std::function<double(double)>& g,
                            const std::function<double(double)>& h) {
  const double rho = std::clamp(c / std::sqrt(a * b), -1.0, 1.0);
  const double sa = std::sqrt(a), sb = std::sqrt(b);
  const double perp = std::sqrt(std::max(0.0, 1.0 - rho * rho));
  constexpr double kCut = 12.0;
  return integrate(
      [&](double z1) {
        double inner = 0.0;
        if (perp < 1e-12) {
          inner = h(sb * rho * z1);
        } else {
          const double z2_star = std::max(-kCut, -rho * z1 / perp);
          inner = integrate([&](double z2) { return h(sb * (rho * z1 + perp * z2)) * std_normal_pdf(z2); },
                            z2_star, kCut);
        }
        return g(sa * z1) * inner * std_normal_pdf(z1);
      },
      0.0, kCut);
}

double relu(double x) { return x > 0.0 ? x : 0.0; }
double step(double x) { return x > 0.0 ? 1.0 : 0.0; }

// Kernel and NTK of a depth-L ReLU network at lambda = Infinite for one input
// pair, every Gaussian expectation by quadrature.
std::pair<double, double> quadrature_kernel(const Vector& x, const Vector& y, int depth, double s2) {
  const double n0 = static_cast<double>(x.size());
  double kxx = x.squaredNorm() / n0, kyy = y.squaredNorm() / n0, kxy = x.dot(y) / n0;
  double q = kxy;
  for (int l = 0; l < depth; ++l) {
    const double a = s2 * kxx, b = s2 * kyy, c = s2 * kxy;
    const double nxy = gaussian_expectation(a, b, c, relu, relu);
    const double dot = gaussian_expectation(a, b, c, step, step);
    kxx = gaussian_expectation(a, a, a, relu, relu);
    kyy = gaussian_expectation(b, b, b, relu, relu);
    kxy = nxy;
    q = nxy + s2 * dot * q;
  }
  return {kxy, q};
}

KernelConfig make_cfg(int depth, Nonlinearity nl, double s2, Lambda lam, int n0) {
  KernelConfig c;
  c.depth = depth;
  c.nonlinearity = nl;
  c.sigma_sq = s2;
  c.lambda = lam;
  c.input_dim = n0;
  return c;
}

}  // namespace

TEST(TemporalFactors, MatchWeightChainCovariances) {
  for (const double lam : {0.1, 1.0, 7.5, 300.0}) {
    for (const double s2 : {0.5, 1.0, 2.0}) {
      const KernelConfig cfg = make_cfg(1, Nonlinearity::Relu, s2, Lambda::finite(lam), 3);
      const double lt = lam / (lam + 1.0 / s2);
      for (int t = 1; t <= 6; ++t) {
        for (int tp = 1; tp <= t; ++tp) {
          const auto [m1, m0] = chain_covariances(t, tp, s2, lt);
          const TemporalFactors f = temporal_factors(t, tp, cfg);
          EXPECT_NEAR(f.m1, m1, 1e-12 * s2) << "t=" << t << " t'=" << tp;
          EXPECT_NEAR(f.m0, m0, 1e-12 * s2) << "t=" << t << " t'=" << tp;
          EXPECT_DOUBLE_EQ(temporal_factors(tp, t, cfg).m1, f.m1);
        }
      }
    }
  }
}

TEST(TemporalFactors, InfinitePenaltyIsStationary) {
  const KernelConfig cfg = make_cfg(1, Nonlinearity::Relu, 1.5, Lambda::infinite(), 3);
  EXPECT_EQ(temporal_factors(1, 1, cfg).lambda_tilde, 1.0);
  EXPECT_EQ(temporal_factors(3, 1, cfg).m0, 0.0);
  EXPECT_EQ(temporal_factors(3, 2, cfg).m1, 1.5);
  EXPECT_EQ(temporal_factors(3, 2, cfg).m0, 1.5);
}

TEST(TemporalFactors, RejectsBadIndices) {
  const KernelConfig cfg;
  EXPECT_THROW(temporal_factors(0, 1, cfg), Error);
}

TEST(GpKernel, LinearClosedForm) {
  const Matrix x = random_inputs(6, 9, 1);
  const Matrix y = random_inputs(5, 9, 2);
  for (const int depth : {1, 2, 4}) {
    const KernelConfig cfg = make_cfg(depth, Nonlinearity::Linear, 0.7, Lambda::finite(2.0), 9);
    const KernelSet ks = gp_kernel(x, y, 3, 2, cfg);
    const TemporalFactors f = temporal_factors(3, 2, cfg);
    const Matrix base = x * y.transpose() / 9.0;
    EXPECT_LT((ks.k1 - std::pow(f.m1, depth) * base).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((ks.k0 - std::pow(f.m0, depth) * base).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(GpKernel, ReluMatchesQuadrature) {
  const Matrix x = random_inputs(3, 7, 3);
  for (const int depth : {1, 2, 3}) {
    const KernelConfig cfg = make_cfg(depth, Nonlinearity::Relu, 1.3, Lambda::infinite(), 7);
    const Matrix k = gp_matrix(x, x, cfg);
    const Matrix q = ntk_kernel(x, x, cfg);
    for (Eigen::Index i = 0; i < 3; ++i) {
      for (Eigen::Index j = i; j < 3; ++j) {
        const auto [kk, qq] = quadrature_kernel(x.row(i).transpose(), x.row(j).transpose(), depth, 1.3);
        EXPECT_NEAR(k(i, j), kk, 1e-9 * std::abs(kk) + 1e-12) << depth << " " << i << " " << j;
        EXPECT_NEAR(q(i, j), qq, 1e-9 * std::abs(qq) + 1e-12) << depth << " " << i << " " << j;
      }
    }
  }
}

TEST(GpKernel, CompositeIdentities) {
  const Matrix x = random_inputs(8, 5, 4);
  const Matrix y = random_inputs(6, 5, 5);
  const KernelConfig cfg = make_cfg(2, Nonlinearity::Relu, 0.9, Lambda::finite(3.0), 5);
  for (const auto [t, tp] : {std::pair{1, 1}, std::pair{2, 1}, std::pair{3, 2}, std::pair{4, 4}}) {
    const KernelSet ks = gp_kernel(x, y, t, tp, cfg);
    const TemporalFactors f = temporal_factors(t, tp, cfg);
    EXPECT_FALSE(ks.lambda_scaled);
    EXPECT_LT((ks.ktilde - (f.m1 * ks.k1 - f.m0 * ks.k0)).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_LT((ks.kdelta - (ks.k1 - ks.k0)).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(GpKernel, SymmetricPositiveSemidefinite) {
  const Matrix x = random_inputs(20, 6, 6);
  for (const Nonlinearity nl : {Nonlinearity::Linear, Nonlinearity::Relu}) {
    const KernelConfig cfg = make_cfg(3, nl, 1.0, Lambda::finite(0.5), 6);
    const KernelSet ks = gp_kernel(x, x, 3, 3, cfg);
    EXPECT_EQ((ks.k1 - ks.k1.transpose()).cwiseAbs().maxCoeff(), 0.0);
    const Eigen::SelfAdjointEigenSolver<Matrix> es(ks.k1);
    EXPECT_GT(es.eigenvalues().minCoeff(), -1e-12 * es.eigenvalues().maxCoeff());
  }
}

TEST(GpKernel, SwappingArgumentsTransposes) {
  const Matrix x = random_inputs(7, 4, 7);
  const Matrix y = random_inputs(5, 4, 8);
  const KernelConfig cfg = make_cfg(2, Nonlinearity::Relu, 1.0, Lambda::finite(1.0), 4);
  const KernelSet a = gp_kernel(x, y, 3, 2, cfg);
  const KernelSet b = gp_kernel(y, x, 2, 3, cfg);
  EXPECT_EQ((a.k1 - b.k1.transpose()).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ((a.k0 - b.k0.transpose()).cwiseAbs().maxCoeff(), 0.0);
}

TEST(GpKernel, DiagonalMatchesFullMatrix) {
  const Matrix x = random_inputs(9, 5, 9);
  for (const Nonlinearity nl : {Nonlinearity::Linear, Nonlinearity::Relu}) {
    const KernelConfig cfg = make_cfg(3, nl, 1.4, Lambda::finite(2.0), 5);
    const Vector d = gp_diagonal(x, 3, cfg);
    const Matrix k = gp_kernel(x, x, 3, 3, cfg).k1;
    EXPECT_LT((d - k.diagonal()).cwiseAbs().maxCoeff(), 1e-12 * k.diagonal().maxCoeff());
  }
}

TEST(GpKernel, ScaledStorageIsTheLargePenaltyLimit) {
  const Matrix x = random_inputs(6, 5, 10);
  const Matrix y = random_inputs(4, 5, 11);
  for (const Nonlinearity nl : {Nonlinearity::Linear, Nonlinearity::Relu}) {
    const KernelConfig inf = make_cfg(2, nl, 1.0, Lambda::infinite(), 5);
    const KernelSet ks = gp_kernel(x, y, 3, 2, inf);
    ASSERT_TRUE(ks.lambda_scaled);
    const double lam = 1e7;
    const KernelSet fin = gp_kernel(x, y, 3, 2, make_cfg(2, nl, 1.0, Lambda::finite(lam), 5));
    const double scale = ks.ktilde.cwiseAbs().maxCoeff();
    EXPECT_LT((lam * fin.ktilde - ks.ktilde).cwiseAbs().maxCoeff(), 1e-4 * scale);
    EXPECT_LT((lam * fin.kdelta - ks.kdelta).cwiseAbs().maxCoeff(), 1e-4 * scale);
    EXPECT_LT((ks.ktilde - ntk_kernel(x, y, inf)).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(NtkKernel, LinearIsDepthPlusOneTimesInnerProduct) {
  const Matrix x = random_inputs(5, 8, 12);
  const Matrix y = random_inputs(4, 8, 13);
  for (const int depth : {1, 2, 3, 5}) {
    const KernelConfig cfg = make_cfg(depth, Nonlinearity::Linear, 1.0, Lambda::infinite(), 8);
    const Matrix expect = (depth + 1) * x * y.transpose() / 8.0;
    EXPECT_LT((ntk_kernel(x, y, cfg) - expect).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(NtkKernel, RejectsFinitePenalty) {
  const Matrix x = random_inputs(2, 3, 14);
  EXPECT_THROW(ntk_kernel(x, x, make_cfg(1, Nonlinearity::Relu, 1.0, Lambda::finite(1.0), 3)), Error);
}

TEST(GpKernel, RejectsShapeMismatch) {
  const Matrix x = random_inputs(2, 3, 15);
  const Matrix y = random_inputs(2, 4, 16);
  EXPECT_THROW(gp_kernel(x, y, 1, 1, make_cfg(1, Nonlinearity::Relu, 1.0, Lambda::infinite(), 3)), Error);
  EXPECT_THROW(gp_matrix(x, x, make_cfg(1, Nonlinearity::Relu, 1.0, Lambda::infinite(), 4)), Error);
}

TEST(MonteCarlo, SmallWidthAgreesWithinStandardErrors) {
  const Matrix x = random_inputs(3, 6, 17);
  const KernelConfig cfg = make_cfg(2, Nonlinearity::Relu, 1.0, Lambda::finite(2.0), 6);
  for (const McTarget target : {McTarget::K1, McTarget::K0}) {
    const McEstimate est = mc_kernel_estimate(x, x, 3, 2, cfg, target, 512, 24, 99);
    const KernelSet ks = gp_kernel(x, x, 3, 2, cfg);
    const Matrix& ref = target == McTarget::K1 ? ks.k1 : ks.k0;
    for (Eigen::Index i = 0; i < 3; ++i)
      for (Eigen::Index j = 0; j < 3; ++j)
        EXPECT_LT(std::abs(est.mean(i, j) - ref(i, j)), 5.0 * est.stderr_(i, j) + 1e-3 * std::abs(ref(i, j)));
  }
}

TEST(MonteCarlo, NtkAgreesWithinStandardErrors) {
  const Matrix x = random_inputs(3, 6, 18);
  const KernelConfig cfg = make_cfg(2, Nonlinearity::Relu, 1.0, Lambda::infinite(), 6);
  const McEstimate est = mc_kernel_estimate(x, x, 2, 2, cfg, McTarget::Ntk, 512, 16, 7);
  const Matrix ref = ntk_kernel(x, x, cfg);
  for (Eigen::Index i = 0; i < 3; ++i)
    for (Eigen::Index j = 0; j < 3; ++j)
      EXPECT_LT(std::abs(est.mean(i, j) - ref(i, j)), 5.0 * est.stderr_(i, j) + 1e-3 * std::abs(ref(i, j)));
}

TEST(MonteCarlo, SeededDeterminism) {
  const Matrix x = random_inputs(2, 4, 19);
  const KernelConfig cfg = make_cfg(1, Nonlinearity::Relu, 1.0, Lambda::finite(1.0), 4);
  const McEstimate a = mc_kernel_estimate(x, x, 2, 1, cfg, McTarget::K1, 128, 4, 5);
  const McEstimate b = mc_kernel_estimate(x, x, 2, 1, cfg, McTarget::K1, 128, 4, 5);
  EXPECT_EQ((a.mean - b.mean).cwiseAbs().maxCoeff(), 0.0);
}
