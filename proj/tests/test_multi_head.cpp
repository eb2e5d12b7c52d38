#include "cltheory/multi_head.hpp"
#include "cltheory/order_params.hpp"
#include "cltheory/taskgen.hpp"
#include "fixtures.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace cltheory;
using cltheory::testing::make_task;
using cltheory::testing::random_inputs;
using cltheory::testing::random_signs;

namespace {

KernelConfig relu_cfg(int n0, Lambda lam = Lambda::infinite(), double s2 = 1.0) {
  KernelConfig c;
  c.input_dim = n0;
  c.lambda = lam;
  c.sigma_sq = s2;
  return c;
}

// Teacher pair with shared inputs and normalized labels.
std::pair<Dataset, Dataset> normalized_pair(double overlap, std::uint64_t seed, int p = 60, int n0 = 20) {
  const KernelConfig cfg = relu_cfg(n0);
  auto v = gen_teacher_pair(p, n0, overlap, 1.0, seed);
  return {normalize_labels(v[0], cfg), normalize_labels(v[1], cfg)};
}

double quadratic_residual(double u, double s2, double alpha, double term) {
  return u * u / s2 - (1.0 - alpha) * u - term;
}

}  // namespace

TEST(SolveU11, Examples) {
  const Dataset d = make_task(random_inputs(30, 10, 1), random_signs(30, 2));
  const KernelConfig cfg = relu_cfg(10);
  EXPECT_NEAR(solve_u11(d, cfg, 1e-12), 1.0, 1e-9);
  const Dataset n = normalize_labels(d, cfg);
  for (const double a : {0.3, 1.0, 2.0, 5.0}) EXPECT_NEAR(solve_u11(n, cfg, a), 1.0, 1e-10);
  const KernelConfig c2 = relu_cfg(10, Lambda::infinite(), 2.0);
  EXPECT_NEAR(solve_u11(normalize_labels(d, c2), c2, 1.0), std::sqrt(2.0), 1e-10);
}

TEST(SolveU11, QuadraticResidual) {
  const Dataset d = make_task(random_inputs(30, 10, 3), random_signs(30, 4));
  const KernelConfig cfg = relu_cfg(10, Lambda::infinite(), 1.7);
  const Matrix k = gp_matrix(d.x, d.x, cfg);
  const double q = d.y.dot(k.ldlt().solve(d.y)) / 30.0;
  for (const double a : {0.1, 0.9, 1.0, 3.0, 50.0}) {
    const double u = solve_u11(d, cfg, a);
    EXPECT_GT(u, 0.0);
    // q here is computed without the solver's diagonal jitter.
    EXPECT_LT(std::abs(quadratic_residual(u, 1.7, a, a * q)), 1e-8 * std::max(1.0, a * q));
  }
}

TEST(MultiHead, FixedRepresentationFactors) {
  const auto [d1, d2] = normalized_pair(0.8, 5);
  const KernelConfig cfg = relu_cfg(20);
  double prev = 0.0;
  for (const double a : {0.25, 0.5, 0.75, 0.9, 0.99}) {
    const MultiHeadSolution sol = solve_multi_head(d1, d2, cfg, a);
    const RenormFactors& f = sol.factors();
    EXPECT_EQ(f.regime, Regime::FR);
    EXPECT_EQ(f.u12, 0.0);
    EXPECT_NEAR(f.gap, 1.0 - a, 1e-12);
    EXPECT_NEAR(f.u22_0, a / (1.0 - a), 1e-8);
    EXPECT_GT(f.u22_1, prev);
    prev = f.u22_1;
    EXPECT_LT(sol.forgetting(), 1e-10);
  }
}

TEST(MultiHead, IdenticalTasksGeneralizeAboveOne) {
  const auto [d1, d2] = normalized_pair(0.8, 6);
  (void)d2;
  for (const double a : {1.05, 1.5, 3.0}) {
    EXPECT_EQ(solve_multi_head(d1, d1, relu_cfg(20), a).factors().regime, Regime::G);
  }
}

TEST(MultiHead, RegimeAgreesWithClassification) {
  const KernelConfig cfg = relu_cfg(20);
  for (const double ov : {0.6, 0.9, 0.97}) {
    const auto [d1, d2] = normalized_pair(ov, 7);
    const double gs = gamma_sim(d1, d2, cfg);
    EXPECT_NEAR(alpha_c_exact(d1, d2, cfg), alpha_c(gs), 1e-6 * alpha_c(gs));
    for (double a = 0.5; a < 12.0; a *= 1.3) {
      const Regime expect = classify_regime(a, gs).regime;
      const MultiHeadSolution sol = solve_multi_head(d1, d2, cfg, a);
      if (std::abs(a - alpha_c(gs)) < 1e-6) continue;
      EXPECT_EQ(sol.factors().regime, expect) << "overlap " << ov << " alpha " << a;
      if (expect == Regime::G) {
        EXPECT_GT(sol.forgetting(), 0.0);
      } else {
        EXPECT_LT(sol.forgetting(), 1e-10);
      }
    }
  }
}

TEST(MultiHead, HeadTwoInterpolatesItsTask) {
  const auto [d1, d2] = normalized_pair(0.9, 8);
  const KernelConfig cfg = relu_cfg(20);
  for (const double a : {0.5, 1.5, 8.0}) {
    const HeadPair m = solve_multi_head(d1, d2, cfg, a).mean_predictors(d2.x);
    EXPECT_LT((m.head2 - d2.y).cwiseAbs().maxCoeff(), 1e-6) << a;
  }
  for (const double a : {0.5, 1.5}) {
    const HeadPair m = solve_multi_head(d1, d2, relu_cfg(20, Lambda::finite(10.0)), a).mean_predictors(d2.x);
    EXPECT_LT((m.head2 - d2.y).cwiseAbs().maxCoeff(), 1e-6) << a;
  }
}

TEST(MultiHead, FinitePenaltyFactorsAreOrdered) {
  const auto [d1, d2] = normalized_pair(0.9, 9);
  for (const double lam : {0.1, 1.0, 10.0}) {
    for (const double a : {0.5, 2.0}) {
      const RenormFactors f = solve_renorm(d1, d2, relu_cfg(20, Lambda::finite(lam)), a);
      EXPECT_GT(f.u22_1, f.u22_0);
      EXPECT_GE(f.u22_0, 0.0);
      EXPECT_LT(f.residual, 1e-8);
    }
  }
}

TEST(MultiHead, LargeFinitePenaltyApproachesFixedRepresentation) {
  const auto [d1, d2] = normalized_pair(0.9, 10);
  const RenormFactors f = solve_renorm(d1, d2, relu_cfg(20, Lambda::finite(1e5)), 0.5);
  EXPECT_NEAR(f.gap, 0.5, 1e-2);
}

TEST(MultiHead, OverfittingGeneralizationGrowsWithPenalty) {
  const auto [d1, d2] = normalized_pair(0.5, 11);
  const KernelConfig inf = relu_cfg(20);
  const double a = 2.0;
  ASSERT_EQ(solve_multi_head(d1, d2, inf, a).factors().regime, Regime::OF);
  const Dataset probe = perturbed_copy(d2, 0.1, 3, 1);
  double prev = 0.0;
  for (const double lam : {10.0, 100.0, 1000.0}) {
    const double g = solve_multi_head(d1, d2, relu_cfg(20, Lambda::finite(lam)), a).generalization(probe);
    EXPECT_GT(g, prev) << lam;
    prev = g;
  }
}

TEST(MultiHead, HiddenKernelIgnoresTaskTwoLabelsInOverfitting) {
  const auto [d1, d2] = normalized_pair(0.5, 12);
  const KernelConfig cfg = relu_cfg(20);
  Dataset flipped = d2;
  flipped.y = -d2.y;
  const MultiHeadSolution a = solve_multi_head(d1, d2, cfg, 2.0);
  const MultiHeadSolution b = solve_multi_head(d1, flipped, cfg, 2.0);
  ASSERT_EQ(a.factors().regime, Regime::OF);
  const Matrix ka = a.hidden_kernel(d2.x, d2.x).k_learned;
  const Matrix kb = b.hidden_kernel(d2.x, d2.x).k_learned;
  EXPECT_LT((ka - kb).cwiseAbs().maxCoeff(), 1e-8 * std::max(1.0, ka.cwiseAbs().maxCoeff()));
}

TEST(MultiHead, EmptyTasksGivePrior) {
  const Dataset e = make_task(Matrix(0, 5), Vector(0));
  const MultiHeadSolution sol = solve_multi_head(e, e, relu_cfg(5), 0.5);
  const Matrix x = random_inputs(4, 5, 13);
  EXPECT_EQ(sol.hidden_kernel(x, x).k_learned.cwiseAbs().maxCoeff(), 0.0);
}

TEST(MultiHead, RepresentationChangeByRegime) {
  const auto [d1, d2] = normalized_pair(0.5, 14);
  const KernelConfig cfg = relu_cfg(20);
  const Matrix x = random_inputs(6, 20, 15);
  EXPECT_EQ(solve_multi_head(d1, d2, cfg, 0.5).repr_change(x, x).cwiseAbs().maxCoeff(), 0.0);
  const MultiHeadSolution of = solve_multi_head(d1, d2, cfg, 2.0);
  ASSERT_EQ(of.factors().regime, Regime::OF);
  EXPECT_GT(of.repr_change(x, x).norm(), 0.0);
  EXPECT_LT(of.forgetting(), 1e-10);
  const Matrix r = of.repr_change(x, x);
  EXPECT_LT((r - r.transpose()).cwiseAbs().maxCoeff(), 1e-10 * r.cwiseAbs().maxCoeff());
}

TEST(MultiHead, FixedRepresentationOldHeadVarianceVanishes) {
  const auto [d1, d2] = normalized_pair(0.8, 16);
  const Matrix x = random_inputs(5, 20, 17);
  const HeadPair v1 = solve_multi_head(d1, d2, relu_cfg(20, Lambda::infinite(), 1.0), 0.5).predictor_variances(x);
  const HeadPair v2 = solve_multi_head(d1, d2, relu_cfg(20, Lambda::infinite(), 1e-4), 0.5).predictor_variances(x);
  EXPECT_GT(v1.head1.minCoeff(), 0.0);
  EXPECT_LT(v2.head1.cwiseAbs().maxCoeff(), 1e-3 * v1.head1.maxCoeff());
  // Head two inherits the task-one weight fluctuations, which do not shrink.
  EXPECT_GT(v2.head2.minCoeff(), 0.0);
}

TEST(MultiHead, RejectsDeepNetworks) {
  const auto [d1, d2] = normalized_pair(0.8, 18);
  KernelConfig cfg = relu_cfg(20);
  cfg.depth = 2;
  EXPECT_THROW(solve_multi_head(d1, d2, cfg, 0.5), Error);
}
