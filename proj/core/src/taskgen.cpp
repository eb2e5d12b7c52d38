#include "cltheory/taskgen.hpp"
#include "cltheory/rng.hpp"

#include <Eigen/Eigenvalues>
#include <boost/random/bernoulli_distribution.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_int_distribution.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

namespace cltheory {

namespace {

// Fisher-Yates shuffle with a portable draw sequence.
void shuffle(std::vector<int>& v, CounterRng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    boost::random::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(v[i - 1], v[pick(rng)]);
  }
}

std::vector<int> iota(int n) {
  std::vector<int> v(static_cast<std::size_t>(n));
  std::iota(v.begin(), v.end(), 0);
  return v;
}

Matrix gaussian(CounterRng& rng, Eigen::Index rows, Eigen::Index cols) {
  boost::random::normal_distribution<double> nd(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = nd(rng);
  return m;
}

Dataset make_dataset(Matrix x, Vector y, const std::string& id, const std::string& prov) {
  Dataset d;
  d.x = std::move(x);
  d.y = std::move(y);
  d.task_id = id;
  d.provenance = prov;
  return d;
}

}  // namespace

Matrix renormalize_rows(const Matrix& x) {
  Matrix out = x;
  const double target = std::sqrt(static_cast<double>(x.cols()));
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double nrm = out.row(i).norm();
    if (nrm > 0.0) out.row(i) *= target / nrm;
  }
  return out;
}

Matrix preprocess(const Matrix& raw) {
  if (raw.rows() < 2) throw Error("preprocess: need at least 2 rows");
  if (!raw.allFinite()) throw Error("preprocess: non-finite input");
  const Matrix centered = raw.rowwise() - raw.colwise().mean();
  const Matrix cov = centered.transpose() * centered / static_cast<double>(raw.rows() - 1);
  const Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
  if (es.info() != Eigen::Success) throw Error("preprocess: eigendecomposition failed");
  const double lmax = es.eigenvalues().maxCoeff();
  if (!(lmax > 0.0)) throw Error("preprocess: input has rank 0");
  const double floor = 1e-8 * lmax;
  const Vector scale = es.eigenvalues().cwiseMax(floor).cwiseSqrt().cwiseInverse();
  const Matrix& u = es.eigenvectors();
  const Matrix white = u * scale.asDiagonal() * u.transpose();
  return renormalize_rows(centered * white);
}

void TargetDistractorParams::validate() const {
  const double x = target_fraction;
  if (!(x > 0.0 && x < 1.0)) throw Error("target-distractor: target_fraction must be in (0, 1)");
  if (rho_shared < 0.0 || rho_shared > 1.0) throw Error("target-distractor: rho_shared must be in [0, 1]");
  if (rho_target < 0.0 || rho_target > 1.0) throw Error("target-distractor: rho_target must be in [0, 1]");
  if (rho_flip < 0.0 || rho_flip > 0.5) throw Error("target-distractor: rho_flip must be in [0, 0.5]");
  if (p < 1 || t < 1) throw Error("target-distractor: P and T must be >= 1");
  const double slack = 1e-12;
  if (rho_target > rho_shared / x + slack) {
    std::ostringstream os;
    os << "target-distractor: infeasible, requires rho_target <= rho_shared/x (" << rho_target
       << " > " << rho_shared / x << ")";
    throw Error(os.str());
  }
  if (rho_target < (rho_shared - (1.0 - x)) / x - slack) {
    std::ostringstream os;
    os << "target-distractor: infeasible, requires rho_target >= (rho_shared-(1-x))/x ("
       << rho_target << " < " << (rho_shared - (1.0 - x)) / x << ")";
    throw Error(os.str());
  }
}

TargetDistractorCounts target_distractor_counts(const TargetDistractorParams& prm) {
  prm.validate();
  TargetDistractorCounts c;
  const double x = prm.target_fraction;
  c.n_target = static_cast<int>(std::lround(x * prm.p));
  c.n_shared_target = static_cast<int>(std::lround(prm.rho_target * c.n_target));
  c.n_shared_distractor = static_cast<int>(std::lround((prm.rho_shared - x * prm.rho_target) * prm.p));
  c.n_shared_distractor = std::clamp(c.n_shared_distractor, 0, prm.p - c.n_target);
  const int shared = c.n_shared_target + c.n_shared_distractor;
  c.pool_rows_needed = shared + prm.t * (prm.p - shared);
  return c;
}

std::vector<Dataset> gen_target_distractor(const Matrix& pool, const TargetDistractorParams& prm) {
  const TargetDistractorCounts c = target_distractor_counts(prm);
  if (pool.rows() < c.pool_rows_needed) {
    throw Error("target-distractor: pool exhausted (need " + std::to_string(c.pool_rows_needed) +
                " rows, have " + std::to_string(pool.rows()) + ")");
  }
  CounterRng order_rng(prm.seed, 0, "td-pool-order");
  std::vector<int> rows = iota(static_cast<int>(pool.rows()));
  shuffle(rows, order_rng);
  const int shared = c.n_shared_target + c.n_shared_distractor;
  const int unique_targets = c.n_target - c.n_shared_target;

  CounterRng label_rng(prm.seed, 0, "td-shared-labels");
  boost::random::bernoulli_distribution<double> coin(0.5);
  Vector shared_labels(c.n_shared_target);
  for (int i = 0; i < c.n_shared_target; ++i) shared_labels(i) = coin(label_rng) ? 1.0 : -1.0;

  std::vector<Dataset> out;
  int next = shared;
  for (int t = 0; t < prm.t; ++t) {
    Matrix x(prm.p, pool.cols());
    Vector y = Vector::Zero(prm.p);
    for (int i = 0; i < shared; ++i) x.row(i) = pool.row(rows[i]);
    y.head(c.n_shared_target) = shared_labels;
    if (t > 0) {
      CounterRng flip_rng(prm.seed, static_cast<std::uint64_t>(t), "td-flips");
      boost::random::bernoulli_distribution<double> flip(prm.rho_flip);
      for (int i = 0; i < c.n_shared_target; ++i)
        if (flip(flip_rng)) y(i) = -y(i);
    }
    CounterRng own_rng(prm.seed, static_cast<std::uint64_t>(t), "td-unique-labels");
    for (int i = shared; i < prm.p; ++i) x.row(i) = pool.row(rows[next++]);
    // Unique targets follow the shared block, then unique distractors.
    for (int i = 0; i < unique_targets; ++i) y(shared + i) = coin(own_rng) ? 1.0 : -1.0;
    std::ostringstream prov;
    prov << "target-distractor rho_shared=" << prm.rho_shared << " rho_target=" << prm.rho_target
         << " rho_flip=" << prm.rho_flip << " x=" << prm.target_fraction << " seed=" << prm.seed;
    out.push_back(make_dataset(std::move(x), std::move(y), "task" + std::to_string(t + 1), prov.str()));
  }
  return out;
}

std::vector<int> pixel_permutation(int n0, double ratio, std::uint64_t seed, int task_index) {
  if (ratio < 0.0 || ratio > 1.0) throw Error("permutation: ratio must be in [0, 1]");
  std::vector<int> perm = iota(n0);
  const int k = static_cast<int>(std::ceil(ratio * n0 - 1e-12));
  if (k < 2) return perm;
  CounterRng rng(seed, static_cast<std::uint64_t>(task_index), "pixel-permutation");
  std::vector<int> chosen = iota(n0);
  shuffle(chosen, rng);
  chosen.resize(static_cast<std::size_t>(k));
  std::sort(chosen.begin(), chosen.end());
  // Sattolo's algorithm: a uniformly random single cycle over the chosen set.
  std::vector<int> cyc = chosen;
  for (std::size_t i = cyc.size() - 1; i > 0; --i) {
    boost::random::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(cyc[i], cyc[pick(rng)]);
  }
  for (std::size_t i = 0; i < chosen.size(); ++i) perm[chosen[i]] = cyc[i];
  return perm;
}

Matrix apply_permutation(const Matrix& x, const std::vector<int>& perm) {
  if (static_cast<Eigen::Index>(perm.size()) != x.cols()) {
    throw Error("permutation: size differs from input dimension");
  }
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) out.col(j) = x.col(perm[j]);
  return out;
}

std::vector<TaskPair> gen_permutation(const TaskPair& base, double ratio, int t, std::uint64_t seed,
                                      bool permute_first) {
  if (t < 1) throw Error("permutation: T must be >= 1");
  std::vector<TaskPair> out;
  const int n0 = static_cast<int>(base.train.input_dim());
  for (int i = 0; i < t; ++i) {
    TaskPair tp = base;
    if (i > 0 || permute_first) {
      const std::vector<int> perm = pixel_permutation(n0, ratio, seed, i);
      tp.train.x = apply_permutation(base.train.x, perm);
      if (tp.test) tp.test->x = apply_permutation(base.test->x, perm);
    }
    const std::string id = "task" + std::to_string(i + 1);
    std::ostringstream prov;
    prov << "permutation ratio=" << ratio << " seed=" << seed << " permute_first=" << permute_first;
    tp.train.task_id = id;
    tp.train.provenance = prov.str();
    if (tp.test) {
      tp.test->task_id = id;
      tp.test->split = Split::Test;
      tp.test->provenance = prov.str();
    }
    out.push_back(std::move(tp));
  }
  return out;
}

TaskPair binary_task(const LabeledPool& pool, int p, int p_test, std::uint64_t seed) {
  const Eigen::Index n = pool.images.rows();
  if (static_cast<Eigen::Index>(pool.labels.size()) != n) throw Error("binary task: label count differs from image count");
  if (p < 1 || p_test < 0) throw Error("binary task: p must be >= 1 and p_test >= 0");
  if (p + p_test > n) throw Error("binary task: pool has fewer rows than p + p_test");
  std::vector<int> classes(pool.labels.begin(), pool.labels.end());
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  if (classes.size() < 2) throw Error("binary task: pool needs at least two classes");
  CounterRng crng(seed, 0, "binary-classes");
  shuffle(classes, crng);
  std::map<int, double> sign;
  for (std::size_t i = 0; i < classes.size(); ++i) sign[classes[i]] = i < classes.size() / 2 ? 1.0 : -1.0;
  std::vector<int> rows(static_cast<std::size_t>(n));
  for (int i = 0; i < static_cast<int>(n); ++i) rows[static_cast<std::size_t>(i)] = i;
  CounterRng rrng(seed, 0, "binary-rows");
  shuffle(rows, rrng);
  const auto take = [&](int from, int count, Split split) {
    Matrix x(count, pool.images.cols());
    Vector y(count);
    for (int i = 0; i < count; ++i) {
      const int r = rows[static_cast<std::size_t>(from + i)];
      x.row(i) = pool.images.row(r);
      y(i) = sign[pool.labels[static_cast<std::size_t>(r)]];
    }
    Dataset d = make_dataset(std::move(x), std::move(y), "task1", "binary seed=" + std::to_string(seed));
    d.split = split;
    return d;
  };
  TaskPair out{take(0, p, Split::Train), std::nullopt};
  if (p_test > 0) out.test = take(p, p_test, Split::Test);
  return out;
}

std::vector<Dataset> gen_split(const LabeledPool& src, const SplitParams& prm) {
  if (static_cast<Eigen::Index>(src.labels.size()) != src.images.rows()) {
    throw Error("split: label count differs from image count");
  }
  std::map<int, std::vector<int>> by_class;
  for (std::size_t i = 0; i < src.labels.size(); ++i) by_class[src.labels[i]].push_back(static_cast<int>(i));
  CounterRng rng(prm.seed, 0, "split-order");
  for (auto& [cls, idx] : by_class) shuffle(idx, rng);

  const auto take = [&](const std::vector<std::pair<int, double>>& rows_labels, const std::string& id) {
    Matrix x(static_cast<Eigen::Index>(rows_labels.size()), src.images.cols());
    Vector y(static_cast<Eigen::Index>(rows_labels.size()));
    for (std::size_t i = 0; i < rows_labels.size(); ++i) {
      x.row(static_cast<Eigen::Index>(i)) = src.images.row(rows_labels[i].first);
      y(static_cast<Eigen::Index>(i)) = rows_labels[i].second;
    }
    std::ostringstream prov;
    prov << "split mode=" << (prm.mode == SplitMode::Disjoint ? "disjoint" : "partial")
         << " percent=" << prm.partial_percent << " seed=" << prm.seed;
    return make_dataset(std::move(x), std::move(y), id, prov.str());
  };

  std::vector<Dataset> out;
  if (prm.mode == SplitMode::Disjoint) {
    const int g = prm.classes_per_task;
    if (g < 2 || g % 2 != 0) throw Error("split: classes_per_task must be even and >= 2");
    std::vector<int> classes;
    for (const auto& kv : by_class) classes.push_back(kv.first);
    const int n_tasks = static_cast<int>(classes.size()) / g;
    if (n_tasks < 1) throw Error("split: not enough classes for one task");
    for (int t = 0; t < n_tasks; ++t) {
      std::vector<std::pair<int, double>> rl;
      for (int i = 0; i < prm.p; ++i) {
        const int slot = i % g;
        const int cls = classes[static_cast<std::size_t>(t * g + slot)];
        const std::vector<int>& pool = by_class[cls];
        const std::size_t k = static_cast<std::size_t>(i / g);
        if (k >= pool.size()) {
          throw Error("split: insufficient examples in class " + std::to_string(cls));
        }
        rl.emplace_back(pool[k], slot < g / 2 ? 1.0 : -1.0);
      }
      out.push_back(take(rl, "task" + std::to_string(t + 1)));
    }
    return out;
  }

  if (prm.partial_percent < 0.0 || prm.partial_percent > 100.0) {
    throw Error("split: partial percentage must be in [0, 100]");
  }
  // Per-pair example lists interleave the two classes of the pair and are
  // shared by both tasks, so Partial(0) gives identical datasets.
  const auto pair_list = [&](const std::array<int, 2>& pr) {
    std::vector<std::pair<int, double>> rl;
    const std::vector<int>& a = by_class[pr[0]];
    const std::vector<int>& b = by_class[pr[1]];
    for (std::size_t i = 0; i < std::max(a.size(), b.size()); ++i) {
      if (i < a.size()) rl.emplace_back(a[i], 1.0);
      if (i < b.size()) rl.emplace_back(b[i], -1.0);
    }
    return rl;
  };
  const auto one = pair_list(prm.pair_one);
  const auto two = pair_list(prm.pair_two);
  const double frac = (prm.partial_percent / 2.0 + 50.0) / 100.0;
  const int n_major = static_cast<int>(std::lround(frac * prm.p));
  const int n_minor = prm.p - n_major;
  if (static_cast<int>(one.size()) < n_major || static_cast<int>(two.size()) < n_major) {
    throw Error("split: insufficient examples for the requested P");
  }
  std::vector<std::pair<int, double>> t1(one.begin(), one.begin() + n_major);
  t1.insert(t1.end(), two.begin(), two.begin() + n_minor);
  std::vector<std::pair<int, double>> t2(one.begin(), one.begin() + n_minor);
  t2.insert(t2.end(), two.begin(), two.begin() + n_major);
  out.push_back(take(t1, "task1"));
  out.push_back(take(t2, "task2"));
  return out;
}

std::vector<Dataset> gen_interpolated(const Dataset& d1, const Dataset& d2, int s) {
  if (s < 0) throw Error("interpolated: S must be >= 0");
  if (d1.size() != d2.size() || d1.input_dim() != d2.input_dim()) {
    throw Error("interpolated: datasets must have the same shape");
  }
  const Eigen::Index p = d1.size();
  std::vector<Dataset> out;
  for (int i = 0; i <= s + 1; ++i) {
    const Eigen::Index k = p * i / (s + 1);
    Dataset d = d1;
    d.x.topRows(k) = d2.x.topRows(k);
    d.y.head(k) = d2.y.head(k);
    d.task_id = "interp" + std::to_string(i);
    d.provenance = "interpolated s=" + std::to_string(i) + " of " + std::to_string(s + 1) +
                   " rows_from_task2=" + std::to_string(k);
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<Dataset> append_context(const std::vector<Dataset>& seq, int n_context,
                                    std::uint64_t seed) {
  if (n_context < 0) throw Error("context: n_context must be >= 0");
  if (n_context == 0) return seq;
  std::vector<Dataset> out;
  for (std::size_t t = 0; t < seq.size(); ++t) {
    CounterRng rng(seed, t, "context-vector");
    const Matrix ctx = gaussian(rng, 1, n_context);
    Dataset d = seq[t];
    Matrix x(d.x.rows(), d.x.cols() + n_context);
    x.leftCols(d.x.cols()) = d.x;
    x.rightCols(n_context) = ctx.replicate(d.x.rows(), 1);
    d.x = renormalize_rows(x);
    d.provenance += " context=" + std::to_string(n_context);
    out.push_back(std::move(d));
  }
  return out;
}

Dataset perturbed_copy(const Dataset& d, double noise, std::uint64_t seed, int task_index) {
  CounterRng rng(seed, static_cast<std::uint64_t>(task_index), "input-perturbation");
  Dataset out = d;
  out.x = renormalize_rows(d.x + noise * gaussian(rng, d.x.rows(), d.x.cols()));
  out.split = Split::Test;
  out.provenance += " perturbed=" + std::to_string(noise);
  return out;
}

std::vector<Dataset> gen_teacher_pair(int p, int n0, double overlap, double shared_inputs,
                                      std::uint64_t seed) {
  if (p < 1 || n0 < 1) throw Error("teacher pair: P and N0 must be >= 1");
  if (overlap < -1.0 || overlap > 1.0) throw Error("teacher pair: overlap must be in [-1, 1]");
  if (shared_inputs < 0.0 || shared_inputs > 1.0) throw Error("teacher pair: shared fraction in [0, 1]");
  CounterRng trng(seed, 0, "teacher-weights");
  const Matrix w = gaussian(trng, n0, 2);
  const Vector w1 = w.col(0);
  const Vector w2 = overlap * w1 + std::sqrt(1.0 - overlap * overlap) * w.col(1);
  const int shared = static_cast<int>(std::lround(shared_inputs * p));
  CounterRng xr(seed, 0, "teacher-inputs");
  const Matrix common = renormalize_rows(gaussian(xr, shared, n0));
  std::vector<Dataset> out;
  for (int t = 0; t < 2; ++t) {
    CounterRng own(seed, static_cast<std::uint64_t>(t + 1), "teacher-inputs");
    Matrix x(p, n0);
    x.topRows(shared) = common;
    x.bottomRows(p - shared) = renormalize_rows(gaussian(own, p - shared, n0));
    const Vector& wt = t == 0 ? w1 : w2;
    Vector y = (x * wt).unaryExpr([](double v) { return v >= 0.0 ? 1.0 : -1.0; });
    std::ostringstream prov;
    prov << "teacher overlap=" << overlap << " shared=" << shared_inputs << " seed=" << seed;
    out.push_back(make_dataset(std::move(x), std::move(y), "task" + std::to_string(t + 1), prov.str()));
  }
  return out;
}

}  // namespace cltheory
