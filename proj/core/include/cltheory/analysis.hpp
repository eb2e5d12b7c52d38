#pragma once

#include "cltheory/types.hpp"

#include <map>
#include <string>
#include <utility>
#include <vector>

namespace cltheory {

struct ExponentialFit {
  double f_max = 0.0;
  double tau = 0.0;
  // Sum of squared residuals over the fitted points.
  double residual = 0.0;
  // Set for an all-zero series, where tau carries no information.
  bool tau_undefined = false;
  // Number of leading points kept after truncation at the maximum.
  int points_used = 0;
};

// Least-squares fit of F(t) = f_max (1 - exp(-(t - 1) / tau)) with f_max >= 0,
// tau > 0. Non-monotone series are truncated at their maximum. Multi-start
// over tau in {0.5, 2, 8, 32}, best residual kept.
ExponentialFit fit_exponential(const std::vector<std::pair<double, double>>& series);

struct PveResult {
  double r2_full = 0.0;
  // Keys: gamma_feature, gamma_rf, gamma_rule.
  std::map<std::string, double> pve;
  bool normalized = false;
};

// Proportion of variance explained by each of three OP columns (feature, RF,
// rule) through leave-one-out linear regressions with intercept. Negative
// contributions are clamped to 0 before normalizing to sum 1. Constant columns
// get PVE 0. Throws when R^2 of the full model is below min_r2.
PveResult pve(const Vector& dependent, const Matrix& ops_table, double min_r2 = 0.05);

enum class AlphaCMethod {
  // Largest centered finite-difference slope of F21(alpha).
  SteepestF21,
  // First crossing of (max + min) / 2 by G(alpha), linearly interpolated.
  GMidpoint,
  // Midpoint of the first grid cell where F21 rises above onset_tol * max F21.
  Onset,
};

// Empirical boundary from a curve on an increasing alpha grid. Points with
// alpha <= 1 are ignored. Throws on flat curves.
double estimate_alpha_c(const std::vector<std::pair<double, double>>& curve, AlphaCMethod method,
                        double onset_tol = 1e-6);

}  // namespace cltheory
