#pragma once

#include "cltheory/dataset.hpp"
#include "cltheory/kernel.hpp"

#include <limits>
#include <string>

namespace cltheory {

enum class Regime { FR, OF, G };

std::string to_string(Regime r);

struct OrderParameters {
  double gamma_feature = 0.0;
  double gamma_rf = 0.0;
  double gamma_rule = 0.0;
  double conflict = 0.0;
  double gamma_sim = 0.0;
  // Only filled when requested.
  double f21_full = std::numeric_limits<double>::quiet_NaN();
  int depth_used = 1;
  std::string pair;
};

struct RfRule {
  double gamma_rf = 0.0;
  double gamma_rule = 0.0;
};

struct PhasePoint {
  double alpha = 0.0;
  double gamma_sim = 0.0;
  Regime regime = Regime::FR;
  double alpha_c = std::numeric_limits<double>::infinity();
};

// All order parameters use last-layer GP kernels at lambda = Infinite
// (K^{L,1} with m = sigma^2), whatever lambda the config carries.

// (1/P) Tr(K22^{-1} K21 K11^{-1} K12).
double gamma_feature(const Dataset& d1, const Dataset& d2, const KernelConfig& cfg);

RfRule gamma_rf_rule(const Dataset& d1, const Dataset& d2, const KernelConfig& cfg);

// Short-term forgetting predicted from the conflict: 2 (gamma_RF - gamma_rule).
double predict_f21(const OrderParameters& ops);

// Random-feature forgetting after two tasks, without the symmetry assumption.
double f21_full(const Dataset& d1, const Dataset& d2, const KernelConfig& cfg);

// Multi-head similarity. Uses L = 1 kernels and internally rescales the
// labels so that (1/P) Y_i^T K_ii^{-1} Y_i = 1.
double gamma_sim(const Dataset& d1, const Dataset& d2, const KernelConfig& cfg);

// Copy of d with labels rescaled so that (1/P) Y^T K^{-1} Y = 1 for the L = 1
// stationary kernel. The phase boundary alpha_c = gamma_sim^{-2} assumes this
// normalization (with sigma^2 = 1).
Dataset normalize_labels(const Dataset& d, const KernelConfig& cfg);

// gamma_sim^{-2} for gamma_sim > 0, otherwise +infinity.
double alpha_c(double gamma_sim);

// FR for alpha < 1, OF for 1 <= alpha < alpha_c, G for alpha >= alpha_c.
PhasePoint classify_regime(double alpha, double gamma_sim);

OrderParameters compute_order_params(const Dataset& d1, const Dataset& d2,
                                     const KernelConfig& cfg, bool with_f21_full = false);

}  // namespace cltheory
