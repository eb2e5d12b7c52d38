#include "cltheory/single_head.hpp"

#include <Eigen/LU>

#include <cmath>

namespace cltheory {

namespace {

KernelSet random_feature_set(const Matrix& xa, const Matrix& xb, int t, int t_prime,
                             const KernelConfig& cfg) {
  KernelSet ks;
  ks.t = t;
  ks.t_prime = t_prime;
  ks.k1 = gp_matrix(xa, xb, cfg);
  ks.k0 = Matrix::Zero(xa.rows(), xb.rows());
  ks.ktilde = ks.k1;
  ks.kdelta = ks.k1;
  return ks;
}

KernelSet block(const Matrix& xa, const Matrix& xb, int t, int t_prime, const KernelConfig& cfg,
                SolveMode mode) {
  if (mode == SolveMode::RandomFeature) return random_feature_set(xa, xb, t, t_prime, cfg);
  return gp_kernel(xa, xb, t, t_prime, cfg);
}

void check_query(const SingleHeadSolution& sol, const Matrix& xq) {
  if (sol.tasks.empty()) throw Error("single-head: solution has no tasks");
  if (xq.cols() != sol.tasks.front().input_dim()) {
    throw Error("single-head: query column count differs from N0");
  }
}

}  // namespace

SingleHeadSolution fit_sequence(const std::vector<Dataset>& seq, const KernelConfig& cfg,
                                SolveMode mode) {
  cfg.validate();
  if (seq.empty()) throw Error("single-head: empty task sequence");
  for (const Dataset& d : seq) {
    d.validate();
    if (d.input_dim() != cfg.input_dim) throw Error("single-head: dataset N0 differs from config");
    if (d.size() != seq.front().size()) throw Error("single-head: datasets differ in P");
  }
  SingleHeadSolution sol;
  sol.cfg = cfg;
  sol.mode = mode;
  sol.tasks = seq;
  const int tn = static_cast<int>(seq.size());
  for (int t = 1; t <= tn; ++t) {
    Vector rhs = seq[t - 1].y;
    for (int s = 1; s < t; ++s) {
      KernelSet ks = block(seq[t - 1].x, seq[s - 1].x, t, s, cfg, mode);
      rhs -= ks.ktilde * sol.v_means[s - 1];
      sol.kernel_cache.emplace(std::make_pair(t, s), std::move(ks));
    }
    KernelSet diag = block(seq[t - 1].x, seq[t - 1].x, t, t, cfg, mode);
    const SpdSolver solver(diag.ktilde);
    sol.v_means.push_back(solver.solve(rhs));
    sol.kernel_cache.emplace(std::make_pair(t, t), std::move(diag));
  }
  return sol;
}

Vector predict_at(const SingleHeadSolution& sol, const Matrix& xq, int time) {
  check_query(sol, xq);
  if (time < 1 || time > sol.num_tasks()) throw Error("single-head: time index out of range");
  Vector out = Vector::Zero(xq.rows());
  for (int s = 1; s <= time; ++s) {
    const KernelSet ks = block(xq, sol.tasks[s - 1].x, time, s, sol.cfg, sol.mode);
    out += ks.ktilde * sol.v_means[s - 1];
  }
  return out;
}

Vector predict(const SingleHeadSolution& sol, const Matrix& xq) {
  return predict_at(sol, xq, sol.num_tasks());
}

Vector predictor_variance(const SingleHeadSolution& sol, const Matrix& xq) {
  check_query(sol, xq);
  if (sol.mode != SolveMode::FullGibbs) throw Error("single-head: variance requires FullGibbs mode");
  const KernelConfig& cfg = sol.cfg;
  const int tn = sol.num_tasks();
  const Eigen::Index p = sol.tasks.front().size();
  // Unknowns: v_1..v_T then p_2..p_T, each a P-block.
  const auto v_off = [p](int t) { return (t - 1) * p; };
  const auto p_off = [p, tn](int t) { return (tn + t - 2) * p; };
  const Eigen::Index n = (2 * tn - 1) * p;
  Matrix a = Matrix::Zero(n, n);
  Matrix rhs_c(n, xq.rows());
  a.block(0, 0, p, p) = sol.kernel_cache.at({1, 1}).ktilde;
  for (int t = 2; t <= tn; ++t) {
    for (int s = 1; s <= t; ++s) {
      const KernelSet& ks = sol.kernel_cache.at({t, s});
      a.block(p_off(t), v_off(s), p, p) = ks.ktilde;
      a.block(v_off(s), p_off(t), p, p) = ks.ktilde.transpose();
      if (s >= 2) {
        const double m0 = temporal_factors(t, s, cfg).m0;
        Matrix pp = m0 * ks.k0;
        if (s == t && !ks.lambda_scaled) pp -= ks.ktilde;
        a.block(p_off(t), p_off(s), p, p) = pp;
        if (s != t) a.block(p_off(s), p_off(t), p, p) = pp.transpose();
      }
    }
  }
  for (int s = 1; s <= tn; ++s) {
    const KernelSet ks = gp_kernel(xq, sol.tasks[s - 1].x, tn, s, cfg);
    rhs_c.middleRows(v_off(s), p) = ks.ktilde.transpose();
    if (s >= 2) rhs_c.middleRows(p_off(s), p) = temporal_factors(tn, s, cfg).m0 * ks.k0.transpose();
  }
  const Eigen::PartialPivLU<Matrix> lu(a);
  const Matrix sol_c = lu.solve(rhs_c);
  const Vector prior = temporal_factors(tn, tn, cfg).m1 * gp_diagonal(xq, tn, cfg);
  Vector var(xq.rows());
  for (Eigen::Index i = 0; i < xq.rows(); ++i) var(i) = prior(i) - rhs_c.col(i).dot(sol_c.col(i));
  return var;
}

double loss(const Vector& pred, const Vector& y) { return normalized_loss(pred, y); }

double recursion_residual(const SingleHeadSolution& sol) {
  double worst = 0.0;
  for (int t = 1; t <= sol.num_tasks(); ++t) {
    Vector acc = -sol.tasks[t - 1].y;
    for (int s = 1; s <= t; ++s) acc += sol.kernel_cache.at({t, s}).ktilde * sol.v_means[s - 1];
    const double scale = sol.tasks[t - 1].y.norm();
    worst = std::max(worst, scale > 0.0 ? acc.norm() / scale : acc.norm());
  }
  return worst;
}

ForgettingResult forgetting_matrix(const std::vector<Dataset>& train, const KernelConfig& cfg,
                                   SolveMode mode, const std::optional<std::vector<Dataset>>& test) {
  const SingleHeadSolution sol = fit_sequence(train, cfg, mode);
  const int tn = sol.num_tasks();
  ForgettingResult out;
  out.f.resize(tn, tn);
  for (int t = 1; t <= tn; ++t)
    for (int s = 1; s <= tn; ++s)
      out.f(t - 1, s - 1) = loss(predict_at(sol, train[s - 1].x, t), train[s - 1].y);
  if (test) {
    if (static_cast<int>(test->size()) != tn) throw Error("single-head: test set count differs from T");
    out.has_g = true;
    out.g.resize(tn, tn);
    for (int s = 1; s <= tn; ++s) {
      const Dataset& ts = (*test)[s - 1];
      const SingleHeadSolution alone = fit_sequence({train[s - 1]}, cfg, mode);
      const double g0 = loss(predict(alone, ts.x), ts.y);
      if (!(g0 > 0.0)) throw Error("single-head: single-task test loss is zero; G undefined");
      for (int t = 1; t <= tn; ++t) out.g(t - 1, s - 1) = loss(predict_at(sol, ts.x, t), ts.y) / g0;
    }
  }
  return out;
}

}  // namespace cltheory
