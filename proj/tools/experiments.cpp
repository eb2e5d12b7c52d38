#include "experiments.hpp"

#include "cltheory/analysis.hpp"
#include "cltheory/gdsim.hpp"
#include "cltheory/multi_head.hpp"
#include "cltheory/order_params.hpp"
#include "cltheory/single_head.hpp"

#include <boost/asio/post.hpp>
#include <boost/asio/thread_pool.hpp>
#include <fmt/format.h>

#include <cmath>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <functional>
#include <limits>
#include <memory>

namespace cltheory::cli {

namespace {

// Runs f and prefixes any library error with the stage that raised it.
template <typename F>
auto stage(const char* name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const std::exception& e) {
    throw Error(std::string(name) + ": " + e.what());
  }
}

struct GenPoint {
  std::string label;
  double a = 0.0, b = 0.0, c = 0.0;
};

struct Tasks {
  std::vector<Dataset> train;
  std::vector<Dataset> test;
};

std::string num(double v) { return fmt::format("{}", v); }

std::vector<GenPoint> generator_points(const GeneratorConfig& g) {
  std::vector<GenPoint> pts;
  switch (g.kind) {
    case GeneratorKind::TargetDistractor:
      for (const double s : g.rho_shared)
        for (const double t : g.rho_target)
          for (const double f : g.rho_flip)
            pts.push_back({"rho_shared=" + num(s) + ";rho_target=" + num(t) + ";rho_flip=" + num(f), s, t, f});
      break;
    case GeneratorKind::Permutation:
      for (const double r : g.ratio) pts.push_back({"ratio=" + num(r), r});
      break;
    case GeneratorKind::SplitPartial:
      for (const double x : g.percent) pts.push_back({"percent=" + num(x), x});
      break;
    case GeneratorKind::SplitDisjoint:
      pts.push_back({"classes_per_task=" + std::to_string(g.classes_per_task)});
      break;
    case GeneratorKind::Teacher:
      for (const double o : g.overlap) pts.push_back({"overlap=" + num(o), o});
      break;
  }
  return pts;
}

std::filesystem::path data_path(const std::string& p) {
  const std::filesystem::path path(p);
  if (path.is_absolute()) return path;
  if (const char* root = std::getenv("CLTHEORY_DATA_ROOT")) return std::filesystem::path(root) / path;
  return path;
}

LabeledPool load_pool(const SourceConfig& src) {
  SourceSpec spec = src.spec;
  if (spec.format != SourceFormat::NpySynthetic) {
    spec.path = data_path(spec.path).string();
    if (!spec.labels_path.empty()) spec.labels_path = data_path(spec.labels_path).string();
  }
  LabeledPool pool = load_source(spec);
  if (src.max_rows > 0 && pool.images.rows() > src.max_rows) {
    pool.images.conservativeResize(src.max_rows, Eigen::NoChange);
    pool.labels.resize(static_cast<std::size_t>(src.max_rows));
  }
  if (src.preprocess) pool.images = preprocess(pool.images);
  return pool;
}

Tasks make_tasks(const ExperimentConfig& cfg, const LabeledPool* pool, const GenPoint& pt, std::uint64_t seed) {
  const GeneratorConfig& g = cfg.generator;
  Tasks out;
  switch (g.kind) {
    case GeneratorKind::TargetDistractor: {
      TargetDistractorParams prm;
      prm.rho_shared = pt.a;
      prm.rho_target = pt.b;
      prm.rho_flip = pt.c;
      prm.target_fraction = g.target_fraction;
      prm.p = g.p;
      prm.t = g.tasks;
      prm.seed = seed;
      out.train = gen_target_distractor(pool->images, prm);
      break;
    }
    case GeneratorKind::Permutation: {
      const TaskPair base = binary_task(*pool, g.p, g.p_test, seed);
      for (TaskPair& tp : gen_permutation(base, pt.a, g.tasks, seed, g.permute_first)) {
        out.train.push_back(std::move(tp.train));
        if (tp.test) out.test.push_back(std::move(*tp.test));
      }
      break;
    }
    case GeneratorKind::SplitPartial:
    case GeneratorKind::SplitDisjoint: {
      SplitParams prm;
      prm.mode = g.kind == GeneratorKind::SplitPartial ? SplitMode::Partial : SplitMode::Disjoint;
      prm.partial_percent = pt.a;
      prm.classes_per_task = g.classes_per_task;
      prm.p = g.p;
      prm.seed = seed;
      out.train = gen_split(*pool, prm);
      if (static_cast<int>(out.train.size()) < 2) throw Error("split produced fewer than two tasks");
      if (static_cast<int>(out.train.size()) > g.tasks) out.train.resize(static_cast<std::size_t>(g.tasks));
      break;
    }
    case GeneratorKind::Teacher: {
      const std::vector<Dataset> both = gen_teacher_pair(g.p + g.p_test, g.input_dim, pt.a, g.shared_inputs, seed);
      for (const Dataset& d : both) {
        Dataset tr = d, te = d;
        tr.x = d.x.topRows(g.p);
        tr.y = d.y.head(g.p);
        out.train.push_back(tr);
        if (g.p_test > 0) {
          te.x = d.x.bottomRows(g.p_test);
          te.y = d.y.tail(g.p_test);
          te.split = Split::Test;
          out.test.push_back(te);
        }
      }
      break;
    }
  }
  if (out.test.size() != out.train.size()) {
    out.test.clear();
    for (std::size_t i = 0; i < out.train.size(); ++i) {
      Dataset te = perturbed_copy(out.train[i], g.test_noise, seed, static_cast<int>(i));
      te.split = Split::Test;
      out.test.push_back(std::move(te));
    }
  }
  return out;
}

// Labels rescaled so the L = 1 phase boundary applies; test labels share the
// training scale factor.
void normalize_pair(Tasks& t, const KernelConfig& kcfg) {
  for (std::size_t i = 0; i < t.train.size(); ++i) {
    const double before = t.train[i].y.norm();
    t.train[i] = normalize_labels(t.train[i], kcfg);
    if (before > 0.0) t.test[i].y *= t.train[i].y.norm() / before;
  }
}

std::string task_metric(const char* name, int s) { return fmt::format("{}_task{}", name, s); }

double cosine(const Vector& a, const Vector& b) {
  const double d = a.norm() * b.norm();
  return d > 0.0 ? a.dot(b) / d : std::numeric_limits<double>::quiet_NaN();
}

struct Job {
  std::uint64_t seed = 0;
  const GenPoint* point = nullptr;
  std::optional<Lambda> lambda;
};

class Runner {
 public:
  explicit Runner(const ExperimentConfig& cfg) : cfg_(cfg) {
    if (cfg.generator.kind != GeneratorKind::Teacher) {
      pool_ = std::make_unique<LabeledPool>(stage("taskgen", [&] { return load_pool(cfg.source); }));
    }
  }

  std::vector<Row> run(const Job& job) const {
    Tasks tasks = stage("taskgen", [&] { return make_tasks(cfg_, pool_.get(), *job.point, job.seed); });
    KernelConfig k = cfg_.kernel;
    k.input_dim = static_cast<int>(tasks.train.front().input_dim());
    if (job.lambda) k.lambda = *job.lambda;
    Emitter e{job.seed, job.point->label, job.lambda ? job.lambda->to_string() : std::string(), {}};
    switch (cfg_.kind) {
      case ExperimentKind::OpsSweep: ops_sweep(tasks, k, e); break;
      case ExperimentKind::SingleHeadSequence: single_head(tasks, k, e); break;
      case ExperimentKind::MultiHeadPhase: multi_head_phase(tasks, k, e); break;
      case ExperimentKind::GdCrosscheck: gd_crosscheck(tasks, k, job.seed, e); break;
      case ExperimentKind::LambdaSweep: lambda_sweep(tasks, k, e); break;
    }
    return std::move(e.rows);
  }

 private:
  struct Emitter {
    std::uint64_t seed;
    std::string point;
    std::string lambda;
    std::vector<Row> rows;

    void add(std::optional<int> t, std::optional<double> alpha, std::string metric, double value) {
      rows.push_back({seed, point, t, alpha, lambda, std::move(metric), value});
    }
  };

  void ops_sweep(const Tasks& tasks, const KernelConfig& k, Emitter& e) const {
    const OrderParameters o =
        stage("order-params", [&] { return compute_order_params(tasks.train[0], tasks.train[1], k, true); });
    e.add(2, std::nullopt, "gamma_feature", o.gamma_feature);
    e.add(2, std::nullopt, "gamma_rf", o.gamma_rf);
    e.add(2, std::nullopt, "gamma_rule", o.gamma_rule);
    e.add(2, std::nullopt, "conflict", o.conflict);
    e.add(2, std::nullopt, "gamma_sim", o.gamma_sim);
    e.add(2, std::nullopt, "f21_full", o.f21_full);
    e.add(2, std::nullopt, "f21_predicted", predict_f21(o));
  }

  void single_head(const Tasks& tasks, const KernelConfig& k, Emitter& e) const {
    const ForgettingResult fr = stage("single-head", [&] {
      return forgetting_matrix(tasks.train, k, SolveMode::FullGibbs, tasks.test);
    });
    const int n = static_cast<int>(fr.f.rows());
    std::vector<std::pair<double, double>> series;
    for (int t = 1; t <= n; ++t) {
      for (int s = 1; s <= t; ++s) {
        e.add(t, std::nullopt, task_metric("train_loss", s), fr.f(t - 1, s - 1));
        if (fr.has_g) e.add(t, std::nullopt, task_metric("generalization", s), fr.g(t - 1, s - 1));
      }
      const double forget = fr.f(t - 1, 0) - fr.f(0, 0);
      e.add(t, std::nullopt, "forgetting_task1", forget);
      series.emplace_back(t, forget);
    }
    if (n >= 3) {
      try {
        const ExponentialFit fit = fit_exponential(series);
        e.add(std::nullopt, std::nullopt, "fit_f_max", fit.f_max);
        if (!fit.tau_undefined) e.add(std::nullopt, std::nullopt, "fit_tau", fit.tau);
        e.add(std::nullopt, std::nullopt, "fit_residual", fit.residual);
      } catch (const Error&) {
        // Series that peak within the first two tasks carry no fit.
      }
    }
  }

  void multi_head_phase(Tasks tasks, const KernelConfig& k, Emitter& e) const {
    if (cfg_.normalize_labels) stage("order-params", [&] { normalize_pair(tasks, k); });
    const Dataset& d1 = tasks.train[0];
    const Dataset& d2 = tasks.train[1];
    const double gs = stage("order-params", [&] { return gamma_sim(d1, d2, k); });
    e.add(2, std::nullopt, "gamma_sim", gs);
    e.add(2, std::nullopt, "alpha_c_predicted", alpha_c(gs));
    std::vector<std::pair<double, double>> curve;
    for (const double al : cfg_.alphas) {
      const MultiHeadSolution sol = stage("multi-head", [&] { return solve_multi_head(d1, d2, k, al); });
      const RenormFactors& f = sol.factors();
      const double f21 = sol.forgetting();
      curve.emplace_back(al, f21);
      e.add(2, al, "F21", f21);
      e.add(2, al, "G22", stage("multi-head", [&] { return sol.generalization(tasks.test[1]); }));
      e.add(2, al, "regime", static_cast<double>(static_cast<int>(f.regime)));
      e.add(2, al, "regime_predicted", static_cast<double>(static_cast<int>(classify_regime(al, gs).regime)));
      e.add(2, al, "u11", f.u11);
      e.add(2, al, "u12", f.u12);
      e.add(2, al, "u22_1", f.u22_1);
      e.add(2, al, "u22_0", f.u22_0);
      e.add(2, al, "diverging", f.diverging ? 1.0 : 0.0);
    }
    // The empirical boundary needs a rising F21 above alpha = 1; flat or
    // too-coarse grids simply produce no estimate.
    try {
      e.add(2, std::nullopt, "alpha_c_estimated", estimate_alpha_c(curve, AlphaCMethod::Onset));
    } catch (const Error&) {
    }
  }

  void gd_crosscheck(const Tasks& tasks, const KernelConfig& k, std::uint64_t seed, Emitter& e) const {
    const SingleHeadSolution sol = stage("single-head", [&] { return fit_sequence(tasks.train, k, SolveMode::FullGibbs); });
    TrainConfig tc = cfg_.train.cfg;
    tc.seed = seed;
    const MlpParams init = stage("gd-sim", [&] {
      return init_mlp(k.input_dim, cfg_.train.width, k.depth, k.nonlinearity, tc.sigma0, seed);
    });
    const ClMetrics m = stage("gd-sim", [&] { return run_cl_experiment(tasks.train, tasks.test, init, tc, cfg_.train.mode); });
    const int n = static_cast<int>(tasks.train.size());
    for (int t = 1; t <= n; ++t) {
      const StepLog& log = m.logs[static_cast<std::size_t>(t - 1)];
      e.add(t, std::nullopt, "gd_steps", static_cast<double>(log.steps));
      e.add(t, std::nullopt, "gd_converged", log.converged ? 1.0 : 0.0);
      for (int s = 1; s <= t; ++s) {
        const Dataset& tr = tasks.train[static_cast<std::size_t>(s - 1)];
        const Dataset& te = tasks.test[static_cast<std::size_t>(s - 1)];
        e.add(t, std::nullopt, task_metric("gd_train_loss", s), m.train_loss(t - 1, s - 1));
        e.add(t, std::nullopt, task_metric("gd_test_loss", s), m.test_loss(t - 1, s - 1));
        e.add(t, std::nullopt, task_metric("theory_train_loss", s), loss(predict_at(sol, tr.x, t), tr.y));
        e.add(t, std::nullopt, task_metric("theory_test_loss", s), loss(predict_at(sol, te.x, t), te.y));
      }
    }
    const int heads = static_cast<int>(m.final_params.readouts.size());
    for (int s = 1; s <= n; ++s) {
      const Matrix& xq = tasks.test[static_cast<std::size_t>(s - 1)].x;
      const Vector gd = forward(m.final_params, xq, std::min(s, heads) - 1);
      e.add(n, std::nullopt, task_metric("cosine", s), cosine(gd, predict(sol, xq)));
    }
  }

  void lambda_sweep(Tasks tasks, const KernelConfig& k, Emitter& e) const {
    tasks.train.resize(2);
    tasks.test.resize(2);
    const ForgettingResult fr = stage("single-head", [&] {
      return forgetting_matrix(tasks.train, k, SolveMode::FullGibbs, tasks.test);
    });
    e.add(2, std::nullopt, "single_head_F21", fr.f(1, 0));
    e.add(2, std::nullopt, "single_head_G22", fr.g(1, 1));
    if (k.depth != 1) return;
    if (cfg_.normalize_labels) stage("order-params", [&] { normalize_pair(tasks, k); });
    const double al = cfg_.alphas.front();
    const MultiHeadSolution sol = stage("multi-head", [&] { return solve_multi_head(tasks.train[0], tasks.train[1], k, al); });
    e.add(2, al, "multi_head_F21", sol.forgetting());
    e.add(2, al, "multi_head_G22", stage("multi-head", [&] { return sol.generalization(tasks.test[1]); }));
    e.add(2, al, "regime", static_cast<double>(static_cast<int>(sol.factors().regime)));
    e.add(2, al, "u22_gap", sol.factors().gap);
  }

  const ExperimentConfig& cfg_;
  std::unique_ptr<LabeledPool> pool_;
};

// Proportion of F21 variance explained by each order parameter across all
// ops-sweep rows; skipped when the regression explains too little.
void append_pve(std::vector<Row>& rows) {
  std::vector<std::array<double, 4>> table;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].metric != "gamma_feature") continue;
    // ops_sweep emits a fixed block of seven metrics per job.
    table.push_back({rows[i].value, rows[i + 1].value, rows[i + 2].value, rows[i + 5].value});
  }
  if (table.size() < 5) return;
  Matrix ops(static_cast<Eigen::Index>(table.size()), 3);
  Vector dep(static_cast<Eigen::Index>(table.size()));
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    ops.row(r) << table[i][0], table[i][1], table[i][2];
    dep(r) = table[i][3];
  }
  try {
    const PveResult res = pve(dep, ops);
    rows.push_back({0, "all", std::nullopt, std::nullopt, "", "f21_r2", res.r2_full});
    for (const auto& [name, v] : res.pve) rows.push_back({0, "all", std::nullopt, std::nullopt, "", "pve_" + name, v});
  } catch (const Error&) {
  }
}

}  // namespace

std::vector<Row> run_experiment(const ExperimentConfig& cfg, int threads, std::uint64_t seed_offset) {
  if (cfg.seeds.empty()) throw Error("config: seeds: list must not be empty");
  const std::vector<GenPoint> points = generator_points(cfg.generator);
  const Runner runner(cfg);

  const bool per_lambda = cfg.kind != ExperimentKind::OpsSweep;
  std::vector<Job> jobs;
  for (const std::uint64_t s : cfg.seeds)
    for (const GenPoint& pt : points) {
      if (per_lambda) {
        for (const Lambda& l : cfg.lambdas) jobs.push_back({s + seed_offset, &pt, l});
      } else {
        jobs.push_back({s + seed_offset, &pt, std::nullopt});
      }
    }

  std::vector<std::vector<Row>> results(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  {
    boost::asio::thread_pool workers(static_cast<std::size_t>(std::max(1, threads)));
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      boost::asio::post(workers, [&, i] {
        try {
          results[i] = runner.run(jobs[i]);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      });
    }
    workers.join();
  }
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (!errors[i]) continue;
    try {
      std::rethrow_exception(errors[i]);
    } catch (const std::exception& e) {
      throw Error(fmt::format("seed {} point {}: {}", jobs[i].seed, jobs[i].point->label, e.what()));
    }
  }
  std::vector<Row> rows;
  for (auto& r : results) rows.insert(rows.end(), std::make_move_iterator(r.begin()), std::make_move_iterator(r.end()));
  if (cfg.kind == ExperimentKind::OpsSweep) append_pve(rows);
  return rows;
}

}  // namespace cltheory::cli
