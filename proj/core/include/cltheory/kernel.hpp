#pragma once

#include "cltheory/types.hpp"

#include <cstdint>
#include <string>

namespace cltheory {

struct KernelConfig {
  int depth = 1;
  Nonlinearity nonlinearity = Nonlinearity::Relu;
  double sigma_sq = 1.0;
  Lambda lambda = Lambda::infinite();
  int input_dim = 1;

  void validate() const;
};

struct TemporalFactors {
  double m1 = 0.0;
  double m0 = 0.0;
  double lambda_tilde = 0.0;
  int t = 1;
  int t_prime = 1;
};

// m-factors for the pair (t, t'). Symmetric in its arguments.
TemporalFactors temporal_factors(int t, int t_prime, const KernelConfig& cfg);

// Kernel blocks between inputs XA at time t and XB at time t'.
//
// When lambda is Infinite and t, t' >= 2 the blocks ktilde and kdelta vanish
// like 1/lambda. They are then stored multiplied by lambda (ktilde is the NTK,
// kdelta is (NTK - K_GP)/sigma^2) and `lambda_scaled` is set.
struct KernelSet {
  Matrix k1;
  Matrix k0;
  Matrix ktilde;
  Matrix kdelta;
  int t = 1;
  int t_prime = 1;
  bool lambda_scaled = false;
  std::string source_a;
  std::string source_b;
};

KernelSet gp_kernel(const Matrix& xa, const Matrix& xb, int t, int t_prime,
                    const KernelConfig& cfg);

// Last-layer GP kernel at lambda = Infinite (the NNGP kernel K_GP).
Matrix gp_matrix(const Matrix& xa, const Matrix& xb, const KernelConfig& cfg);

// lambda * K~ at lambda = Infinite. Requires an Infinite penalty.
Matrix ntk_kernel(const Matrix& xa, const Matrix& xb, const KernelConfig& cfg);

// Diagonal K^{L,1}_{t,t}(x, x) without forming the full matrix.
Vector gp_diagonal(const Matrix& x, int t, const KernelConfig& cfg);

enum class McTarget { K1, K0, Ntk };

struct McEstimate {
  Matrix mean;
  Matrix stderr_;
  int width = 0;
  int n_samples = 0;
};

// Monte-Carlo oracle over random networks of the given width.
//   K1:  features of one weight chain read at times t and t'.
//   K0:  features of two chains that share history before min(t, t').
//   Ntk: parameter-gradient inner product at lambda = Infinite, computed by
//        exact backpropagation.
McEstimate mc_kernel_estimate(const Matrix& xa, const Matrix& xb, int t, int t_prime,
                              const KernelConfig& cfg, McTarget target, int width,
                              int n_samples, std::uint64_t seed);

// max |est - ref| / sqrt(ref(x,x) ref(x',x')) with the diagonals supplied.
double max_normalized_error(const Matrix& est, const Matrix& ref, const Vector& diag_a,
                            const Vector& diag_b);

}  // namespace cltheory
