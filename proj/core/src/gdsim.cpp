#include "cltheory/gdsim.hpp"
#include "cltheory/linalg.hpp"
#include "cltheory/rng.hpp"

#include <boost/random/normal_distribution.hpp>

#include <cmath>
#include <limits>

namespace cltheory {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Vector gaussian_vector(Eigen::Index n, double sd, CounterRng rng) {
  boost::random::normal_distribution<double> nd(0.0, sd);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = nd(rng);
  return v;
}

Eigen::Map<const RowMajor> layer(const MlpParams& p, const Vector& flat, int l) {
  return {flat.data() + p.layer_offset(l), p.width, p.fan_in(l)};
}

Matrix activate(const Matrix& z, Nonlinearity nl) {
  return nl == Nonlinearity::Relu ? Matrix(z.cwiseMax(0.0)) : z;
}

Matrix derivative(const Matrix& z, Nonlinearity nl) {
  if (nl == Nonlinearity::Linear) return Matrix::Ones(z.rows(), z.cols());
  return (z.array() > 0.0).cast<double>().matrix();
}

void check_head(const MlpParams& p, int head) {
  if (head < 0 || head >= static_cast<int>(p.readouts.size())) throw Error("gd-sim: head index out of range");
}

double sign_accuracy(const Vector& pred, const Vector& y) {
  int n = 0;
  int ok = 0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (y(i) == 0.0) continue;
    ++n;
    if ((pred(i) > 0.0) == (y(i) > 0.0)) ++ok;
  }
  return n == 0 ? std::numeric_limits<double>::quiet_NaN() : static_cast<double>(ok) / n;
}

}  // namespace

Eigen::Index MlpParams::hidden_size() const {
  return static_cast<Eigen::Index>(width) * input_dim +
         static_cast<Eigen::Index>(depth - 1) * width * width;
}

Eigen::Index MlpParams::layer_offset(int l) const {
  if (l == 1) return 0;
  return static_cast<Eigen::Index>(width) * input_dim +
         static_cast<Eigen::Index>(l - 2) * width * width;
}

MlpParams init_mlp(int input_dim, int width, int depth, Nonlinearity nl, double sigma0,
                   std::uint64_t seed) {
  if (input_dim < 1 || width < 1 || depth < 1) throw Error("gd-sim: dimensions must be >= 1");
  if (!(sigma0 > 0.0)) throw Error("gd-sim: sigma0 must be positive");
  MlpParams p;
  p.input_dim = input_dim;
  p.width = width;
  p.depth = depth;
  p.nonlinearity = nl;
  p.hidden = gaussian_vector(p.hidden_size(), sigma0, CounterRng(seed, 0, "mlp-hidden-init"));
  p.readouts.push_back(gaussian_vector(width, sigma0, CounterRng(seed, 0, "mlp-readout-init")));
  return p;
}

Vector forward(const MlpParams& p, const Matrix& x, int head) {
  check_head(p, head);
  if (x.cols() != p.input_dim) throw Error("gd-sim: input dimension mismatch");
  Matrix h = x;
  for (int l = 1; l <= p.depth; ++l) {
    const Matrix z = h * layer(p, p.hidden, l).transpose() / std::sqrt(static_cast<double>(p.fan_in(l)));
    h = activate(z, p.nonlinearity);
  }
  return h * p.readouts[static_cast<std::size_t>(head)] / std::sqrt(static_cast<double>(p.width));
}

LossGradient loss_and_gradient(const MlpParams& p, const Dataset& d, int head) {
  check_head(p, head);
  if (d.input_dim() != p.input_dim) throw Error("gd-sim: input dimension mismatch");
  std::vector<Matrix> hs{d.x};
  std::vector<Matrix> zs;
  for (int l = 1; l <= p.depth; ++l) {
    zs.push_back(hs.back() * layer(p, p.hidden, l).transpose() /
                 std::sqrt(static_cast<double>(p.fan_in(l))));
    hs.push_back(activate(zs.back(), p.nonlinearity));
  }
  const Vector& a = p.readouts[static_cast<std::size_t>(head)];
  const double sn = std::sqrt(static_cast<double>(p.width));
  const Vector r = hs.back() * a / sn - d.y;
  LossGradient out;
  out.loss = 0.5 * r.squaredNorm();
  out.mse = r.squaredNorm() / static_cast<double>(r.size());
  out.grad_readout = hs.back().transpose() * r / sn;
  out.grad_hidden.resize(p.hidden_size());
  Matrix delta = (r * a.transpose() / sn).cwiseProduct(derivative(zs.back(), p.nonlinearity));
  for (int l = p.depth; l >= 1; --l) {
    const double sf = std::sqrt(static_cast<double>(p.fan_in(l)));
    Eigen::Map<RowMajor> g(out.grad_hidden.data() + p.layer_offset(l), p.width, p.fan_in(l));
    g = delta.transpose() * hs[static_cast<std::size_t>(l - 1)] / sf;
    if (l > 1) {
      delta = (delta * layer(p, p.hidden, l) / sf)
                  .cwiseProduct(derivative(zs[static_cast<std::size_t>(l - 2)], p.nonlinearity));
    }
  }
  return out;
}

TrainMode parse_train_mode(const std::string& s) {
  if (s == "vanilla") return TrainMode::Vanilla;
  if (s == "l2") return TrainMode::L2;
  if (s == "online-ewc") return TrainMode::OnlineEwc;
  if (s == "multi-head-w-penalty") return TrainMode::MultiHeadWPenalty;
  throw Error("gd-sim: unknown train mode '" + s + "'");
}

std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::Vanilla: return "vanilla";
    case TrainMode::L2: return "l2";
    case TrainMode::OnlineEwc: return "online-ewc";
    case TrainMode::MultiHeadWPenalty: return "multi-head-w-penalty";
  }
  return "unknown";
}

void TrainConfig::validate() const {
  if (!(eta > 0.0)) throw Error("gd-sim: eta must be positive");
  if (!(stop_mse > 0.0)) throw Error("gd-sim: stop_mse must be positive");
  if (kappa < 0.0) throw Error("gd-sim: kappa must be >= 0");
  if (gamma_decay < 0.0 || gamma_decay > 1.0) throw Error("gd-sim: gamma_decay must be in [0, 1]");
  if (!(sigma0 > 0.0)) throw Error("gd-sim: sigma0 must be positive");
  if (max_steps < 1) throw Error("gd-sim: max_steps must be >= 1");
  if (!(update_tol > 0.0)) throw Error("gd-sim: update_tol must be positive");
}

Vector fisher_diag(const MlpParams& p, const Dataset& d, int head) {
  const LossGradient lg = loss_and_gradient(p, d, head);
  Vector g(lg.grad_hidden.size() + lg.grad_readout.size());
  g << lg.grad_hidden, lg.grad_readout;
  const double denom = std::sqrt(g.array().pow(4).sum()) / static_cast<double>(g.size());
  if (!(denom > 0.0)) throw Error("gd-sim: Fisher normalization is zero (all gradients vanish)");
  return g.array().square() / denom;
}

ContinualTrainer::ContinualTrainer(MlpParams init, TrainConfig cfg, TrainMode mode)
    : params_(std::move(init)), cfg_(cfg), mode_(mode) {
  cfg_.validate();
  if (params_.readouts.size() != 1) throw Error("gd-sim: trainer expects a freshly initialized network");
}

StepLog ContinualTrainer::train_task(const Dataset& d) {
  d.validate();
  const bool multi = mode_ == TrainMode::MultiHeadWPenalty;
  const int head = head_for(tasks_seen_);
  if (multi && tasks_seen_ > 0) {
    params_.readouts.push_back(gaussian_vector(params_.width, cfg_.sigma0,
                                               CounterRng(cfg_.seed, static_cast<std::uint64_t>(tasks_seen_),
                                                          "mlp-readout-init")));
  }
  const Eigen::Index nh = params_.hidden_size();
  Vector& a = params_.readouts[static_cast<std::size_t>(head)];
  const bool regularized = tasks_seen_ > 0 && mode_ != TrainMode::Vanilla;
  if (regularized) {
    anchor_.resize(nh + params_.width);
    anchor_ << params_.hidden, a;
    if (mode_ == TrainMode::OnlineEwc) {
      const Vector f = fisher_diag(params_, *last_task_, 0);
      fisher_bar_ = fisher_bar_.size() == 0 ? f : Vector(cfg_.gamma_decay * fisher_bar_ + f);
    }
  }

  StepLog log;
  Vector pen(nh + params_.width);
  for (long step = 0;; ++step) {
    const LossGradient lg = loss_and_gradient(params_, d, head);
    log.steps = step;
    log.final_mse = lg.mse;
    if (!std::isfinite(lg.loss) || lg.loss > cfg_.divergence_loss) {
      throw Error("gd-sim: training diverged at step " + std::to_string(step));
    }
    if (!regularized && lg.mse < cfg_.stop_mse) {
      log.converged = true;
      log.stop_reason = "mse";
      break;
    }
    if (step >= cfg_.max_steps) {
      log.stop_reason = "max_steps";
      break;
    }
    Vector gh = lg.grad_hidden;
    Vector ga = lg.grad_readout;
    if (regularized) {
      pen.head(nh) = params_.hidden - anchor_.head(nh);
      pen.tail(params_.width) = a - anchor_.tail(params_.width);
      if (mode_ == TrainMode::OnlineEwc) pen = pen.cwiseProduct(fisher_bar_);
      pen *= cfg_.kappa;
      gh += pen.head(nh);
      if (!multi) ga += pen.tail(params_.width);
    }
    params_.hidden -= cfg_.eta * gh;
    a -= cfg_.eta * ga;
    if (regularized) {
      const double upd = cfg_.eta * std::sqrt(gh.squaredNorm() + ga.squaredNorm());
      const double norm = std::sqrt(params_.hidden.squaredNorm() + a.squaredNorm());
      log.final_update_ratio = upd / norm;
      if (log.final_update_ratio < cfg_.update_tol) {
        log.steps = step + 1;
        log.final_mse = loss_and_gradient(params_, d, head).mse;
        log.converged = true;
        log.stop_reason = "update_norm";
        break;
      }
    }
  }
  last_task_ = d;
  ++tasks_seen_;
  return log;
}

ClMetrics run_cl_experiment(const std::vector<Dataset>& seq, const std::optional<std::vector<Dataset>>& test,
                            const MlpParams& init, const TrainConfig& cfg, TrainMode mode) {
  if (seq.empty()) throw Error("gd-sim: empty task sequence");
  if (test && test->size() != seq.size()) throw Error("gd-sim: test list length differs from sequence");
  const Eigen::Index tn = static_cast<Eigen::Index>(seq.size());
  const double nan = std::numeric_limits<double>::quiet_NaN();
  ClMetrics m;
  for (Matrix* mat : {&m.train_mse, &m.train_loss, &m.train_acc, &m.test_mse, &m.test_loss, &m.test_acc})
    mat->setConstant(tn, tn, nan);
  m.has_test = test.has_value();
  ContinualTrainer trainer(init, cfg, mode);
  for (Eigen::Index t = 0; t < tn; ++t) {
    m.logs.push_back(trainer.train_task(seq[static_cast<std::size_t>(t)]));
    for (Eigen::Index s = 0; s <= t; ++s) {
      const int head = trainer.head_for(static_cast<int>(s));
      const Dataset& tr = seq[static_cast<std::size_t>(s)];
      const Vector f = forward(trainer.params(), tr.x, head);
      m.train_mse(t, s) = (f - tr.y).squaredNorm() / static_cast<double>(tr.y.size());
      m.train_loss(t, s) = normalized_loss(f, tr.y);
      m.train_acc(t, s) = sign_accuracy(f, tr.y);
      if (test) {
        const Dataset& ts = (*test)[static_cast<std::size_t>(s)];
        const Vector g = forward(trainer.params(), ts.x, head);
        m.test_mse(t, s) = (g - ts.y).squaredNorm() / static_cast<double>(ts.y.size());
        m.test_loss(t, s) = normalized_loss(g, ts.y);
        m.test_acc(t, s) = sign_accuracy(g, ts.y);
      }
    }
  }
  for (const Vector& a : trainer.params().readouts)
    m.readout_norms.push_back(a.squaredNorm() / static_cast<double>(trainer.params().width));
  m.final_params = trainer.params();
  return m;
}

}  // namespace cltheory
