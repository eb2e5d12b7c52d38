#pragma once

#include "cltheory/dataset.hpp"
#include "cltheory/kernel.hpp"
#include "cltheory/linalg.hpp"
#include "cltheory/order_params.hpp"

#include <memory>

namespace cltheory {

// How u12 is set in the fixed-representation regime at lambda = Infinite.
// Decoupled sets u12 = 0; Coupled uses the stationary value.
enum class FrCoupling { Decoupled, Coupled };

struct MultiHeadOptions {
  FrCoupling fr_coupling = FrCoupling::Decoupled;
  double damping = 0.5;
  int max_iterations = 10000;
  double tolerance = 1e-9;
  // Effective penalty used to evaluate hidden-layer kernels at lambda = Infinite.
  double lambda_eff = 1e6;
};

// Renormalization factors for T = 2, L = 1.
//
// When `diverging` is set (overfitting regime at lambda = Infinite) u22_1 and
// u22_0 hold the coefficient of lambda^{1/2} and `gap` the coefficient of
// lambda^{-1/2}. In the generalization regime at lambda = Infinite `gap` holds
// the coefficient of lambda^{-1}, i.e. sigma^2 lambda (u22_1 - u22_0).
struct RenormFactors {
  double u11 = 0.0;
  double u12 = 0.0;
  double u22_1 = 0.0;
  double u22_0 = 0.0;
  double gap = 0.0;
  Regime regime = Regime::FR;
  Lambda lambda = Lambda::infinite();
  double alpha = 0.0;
  bool diverging = false;
  int iterations = 0;
  double residual = 0.0;
};

// Positive root of u^2/sigma^2 - (1 - alpha) u - (1/N) Y1^T K11^{-1} Y1 = 0
// with 1/N = alpha/P.
double solve_u11(const Dataset& d1, const KernelConfig& cfg, double alpha);

class MultiHeadSolution;

MultiHeadSolution solve_multi_head(const Dataset& d1, const Dataset& d2, const KernelConfig& cfg,
                                   double alpha, const MultiHeadOptions& opts = {});

RenormFactors solve_renorm(const Dataset& d1, const Dataset& d2, const KernelConfig& cfg,
                           double alpha, const MultiHeadOptions& opts = {});

struct HeadPair {
  Vector head1;
  Vector head2;
};

struct HiddenKernel {
  Matrix k_sim;
  Matrix k_learned;
};

class MultiHeadSolution {
 public:
  const RenormFactors& factors() const { return factors_; }
  const Dataset& task1() const;
  const Dataset& task2() const;
  const KernelConfig& config() const;
  // Hidden width N = P / alpha.
  double width() const;

  HeadPair mean_predictors(const Matrix& xq) const;
  // Posterior variances. In the overfitting regime at lambda = Infinite the
  // head-2 values are lambda^{1/2} coefficients (see RenormFactors).
  HeadPair predictor_variances(const Matrix& xq) const;
  HiddenKernel hidden_kernel(const Matrix& xa, const Matrix& xb) const;
  // Delta Phi(x) . Delta Phi(x') at lambda = Infinite.
  Matrix repr_change(const Matrix& xa, const Matrix& xb) const;

  // Head-1 train loss on task 1.
  double forgetting() const;
  // Head-2 loss with variance, sum((f - y)^2 + var) / |y|^2, over the single
  // task reference on the same data.
  double generalization(const Dataset& test2) const;

 private:
  friend MultiHeadSolution solve_multi_head(const Dataset&, const Dataset&, const KernelConfig&,
                                            double, const MultiHeadOptions&);
  struct Impl;
  explicit MultiHeadSolution(std::shared_ptr<const Impl> impl);

  std::shared_ptr<const Impl> impl_;
  RenormFactors factors_;
};

// Exact boundary: smallest alpha >= 1 with omega(alpha) >= sqrt(alpha),
// including the alpha dependence of u11. +infinity when never reached.
double alpha_c_exact(const Dataset& d1, const Dataset& d2, const KernelConfig& cfg);

}  // namespace cltheory
