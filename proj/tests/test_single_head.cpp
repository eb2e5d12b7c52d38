#include "cltheory/single_head.hpp"
#include "fixtures.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace cltheory;
using cltheory::testing::make_task;
using cltheory::testing::random_inputs;
using cltheory::testing::random_signs;

namespace {

KernelConfig cfg_of(int depth, Nonlinearity nl, Lambda lam, int n0, double s2 = 1.0) {
  KernelConfig c;
  c.depth = depth;
  c.nonlinearity = nl;
  c.lambda = lam;
  c.input_dim = n0;
  c.sigma_sq = s2;
  return c;
}

std::vector<Dataset> random_sequence(int tn, int p, int n0, std::uint64_t seed) {
  std::vector<Dataset> seq;
  for (int t = 0; t < tn; ++t) {
    seq.push_back(make_task(random_inputs(p, n0, seed + 17 * t), random_signs(p, seed + 17 * t + 1),
                            "task" + std::to_string(t + 1)));
  }
  return seq;
}

}  // namespace

TEST(SingleHead, FirstTaskIsGaussianProcessRegression) {
  const auto seq = random_sequence(1, 25, 8, 1);
  const Matrix xq = random_inputs(6, 8, 99);
  for (const Lambda lam : {Lambda::infinite(), Lambda::finite(0.7)}) {
    const KernelConfig cfg = cfg_of(2, Nonlinearity::Relu, lam, 8, 1.3);
    const SingleHeadSolution sol = fit_sequence(seq, cfg, SolveMode::FullGibbs);
    const Matrix k = gp_kernel(seq[0].x, seq[0].x, 1, 1, cfg).k1;
    const Matrix kq = gp_kernel(xq, seq[0].x, 1, 1, cfg).k1;
    const Eigen::LDLT<Matrix> ldlt(k);
    const Vector mean = kq * ldlt.solve(seq[0].y);
    EXPECT_LT((predict(sol, xq) - mean).cwiseAbs().maxCoeff(), 1e-8);
    const Matrix kqq = gp_kernel(xq, xq, 1, 1, cfg).k1;
    const Vector var = 1.3 * (kqq.diagonal() - (kq * ldlt.solve(Matrix(kq.transpose()))).diagonal());
    EXPECT_LT((predictor_variance(sol, xq) - var).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(SingleHead, CurrentTaskIsInterpolatedWithZeroVariance) {
  for (const Lambda lam : {Lambda::infinite(), Lambda::finite(2.0)}) {
    for (const int tn : {1, 2, 3}) {
      const auto seq = random_sequence(tn, 20, 10, 5 + tn);
      const KernelConfig cfg = cfg_of(1, Nonlinearity::Relu, lam, 10);
      const SingleHeadSolution sol = fit_sequence(seq, cfg, SolveMode::FullGibbs);
      const Dataset& last = seq.back();
      EXPECT_LT((predict(sol, last.x) - last.y).cwiseAbs().maxCoeff(), 1e-6);
      const Vector var = predictor_variance(sol, last.x);
      EXPECT_LT(var.cwiseAbs().maxCoeff(), 1e-6) << "T=" << tn << " " << lam.to_string();
      EXPECT_LT(recursion_residual(sol), 1e-8);
    }
  }
}

TEST(SingleHead, VarianceNonnegativeOffTraining) {
  const auto seq = random_sequence(3, 15, 6, 21);
  const Matrix xq = random_inputs(10, 6, 22);
  for (const Lambda lam : {Lambda::infinite(), Lambda::finite(0.3)}) {
    const SingleHeadSolution sol = fit_sequence(seq, cfg_of(2, Nonlinearity::Relu, lam, 6), SolveMode::FullGibbs);
    EXPECT_GT(predictor_variance(sol, xq).minCoeff(), -1e-10);
  }
}

TEST(SingleHead, LargePenaltyApproachesInfinite) {
  // P below N0 keeps the linear kernel nonsingular.
  const auto seq = random_sequence(3, 15, 20, 31);
  const Matrix xq = random_inputs(5, 20, 32);
  for (const Nonlinearity nl : {Nonlinearity::Linear, Nonlinearity::Relu}) {
    const SingleHeadSolution inf = fit_sequence(seq, cfg_of(2, nl, Lambda::infinite(), 20), SolveMode::FullGibbs);
    const Vector a = predict(inf, xq);
    const auto gap = [&](double lam) {
      return (a - predict(fit_sequence(seq, cfg_of(2, nl, Lambda::finite(lam), 20), SolveMode::FullGibbs), xq))
          .cwiseAbs()
          .maxCoeff();
    };
    // Linear kernels converge as 1/lambda; the ReLU arc-cosine kink gives lambda^{-1/2}.
    const double rate = nl == Nonlinearity::Linear ? 100.0 : 10.0;
    const double g5 = gap(1e5), g7 = gap(1e7);
    EXPECT_LT(g7, 1e-3 * std::max(1.0, a.cwiseAbs().maxCoeff()));
    EXPECT_NEAR(g5 / g7, rate, 0.1 * rate);
    const Vector va = predictor_variance(inf, xq);
    const Vector vf = predictor_variance(fit_sequence(seq, cfg_of(2, nl, Lambda::finite(1e7), 20), SolveMode::FullGibbs), xq);
    EXPECT_LT((va - vf).cwiseAbs().maxCoeff(), 1e-3 * std::max(1e-12, va.cwiseAbs().maxCoeff()));
  }
}

TEST(SingleHead, PredictAtEarlierTimeIgnoresLaterTasks) {
  const auto seq = random_sequence(3, 12, 5, 41);
  const Matrix xq = random_inputs(4, 5, 42);
  const KernelConfig cfg = cfg_of(1, Nonlinearity::Relu, Lambda::finite(1.5), 5);
  const SingleHeadSolution full = fit_sequence(seq, cfg, SolveMode::FullGibbs);
  const SingleHeadSolution two = fit_sequence({seq[0], seq[1]}, cfg, SolveMode::FullGibbs);
  EXPECT_LT((predict_at(full, xq, 2) - predict(two, xq)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SingleHead, IdenticalTasksNeverForget) {
  const auto one = random_sequence(1, 20, 8, 51);
  const std::vector<Dataset> seq(4, one[0]);
  for (const SolveMode mode : {SolveMode::FullGibbs, SolveMode::RandomFeature}) {
    for (const Lambda lam : {Lambda::infinite(), Lambda::finite(0.5)}) {
      const ForgettingResult fr = forgetting_matrix(seq, cfg_of(2, Nonlinearity::Relu, lam, 8), mode);
      EXPECT_LT(fr.f.cwiseAbs().maxCoeff(), 1e-10);
    }
  }
}

TEST(SingleHead, ForgettingMatrixShapeAndGeneralizationNormalization) {
  const auto train = random_sequence(3, 15, 6, 61);
  const auto test = random_sequence(3, 10, 6, 161);
  const ForgettingResult fr =
      forgetting_matrix(train, cfg_of(1, Nonlinearity::Relu, Lambda::infinite(), 6), SolveMode::FullGibbs, test);
  ASSERT_TRUE(fr.has_g);
  EXPECT_EQ(fr.f.rows(), 3);
  for (int t = 0; t < 3; ++t) EXPECT_LT(fr.f(t, t), 1e-10);
  EXPECT_NEAR(fr.g(0, 0), 1.0, 1e-10);
}

TEST(SingleHead, VarianceScalesWithSigmaPower) {
  const auto seq = random_sequence(2, 12, 5, 71);
  const Matrix xq = random_inputs(4, 5, 72);
  for (const int depth : {1, 3}) {
    const auto var = [&](double s2) {
      return predictor_variance(
          fit_sequence(seq, cfg_of(depth, Nonlinearity::Relu, Lambda::infinite(), 5, s2), SolveMode::FullGibbs), xq);
    };
    const Vector v1 = var(1.0), v2 = var(4.0);
    const double expect = std::pow(4.0, depth + 1);
    for (Eigen::Index i = 0; i < v1.size(); ++i) EXPECT_NEAR(v2(i) / v1(i), expect, 1e-6 * expect);
  }
}

TEST(SingleHead, RandomFeatureVarianceRejected) {
  const auto seq = random_sequence(1, 5, 3, 81);
  const SingleHeadSolution sol =
      fit_sequence(seq, cfg_of(1, Nonlinearity::Relu, Lambda::infinite(), 3), SolveMode::RandomFeature);
  EXPECT_THROW(predictor_variance(sol, seq[0].x), Error);
}

TEST(SingleHead, RejectsMismatchedInputs) {
  auto seq = random_sequence(2, 5, 3, 91);
  seq[1].x = random_inputs(6, 3, 1);
  seq[1].y = random_signs(6, 2);
  EXPECT_THROW(fit_sequence(seq, cfg_of(1, Nonlinearity::Relu, Lambda::infinite(), 3), SolveMode::FullGibbs),
               Error);
  EXPECT_THROW(fit_sequence({}, cfg_of(1, Nonlinearity::Relu, Lambda::infinite(), 3), SolveMode::FullGibbs), Error);
}
