#include "cltheory/kernel.hpp"
#include "cltheory/rng.hpp"

#include <boost/random/normal_distribution.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

namespace cltheory {

namespace {

constexpr Eigen::Index kRowBlock = 256;

// Standard normal block for (sample, layer, row block, stream). Rows can be
// regenerated in the backward pass from the same coordinates.
Matrix normal_block(std::uint64_t seed, int sample, int layer, Eigen::Index block, int stream,
                    Eigen::Index rows, Eigen::Index cols) {
  CounterRng rng = CounterRng(seed, static_cast<std::uint64_t>(sample), "mc-kernel")
                       .child(static_cast<std::uint64_t>(layer))
                       .child(static_cast<std::uint64_t>(block))
                       .child(static_cast<std::uint64_t>(stream));
  boost::random::normal_distribution<double> nd(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = nd(rng);
  return m;
}

void activate(Matrix& h, Nonlinearity nl) {
  if (nl == Nonlinearity::Relu) h = h.cwiseMax(0.0);
}

Matrix derivative(const Matrix& h, Nonlinearity nl) {
  if (nl == Nonlinearity::Linear) return Matrix::Ones(h.rows(), h.cols());
  return (h.array() > 0.0).cast<double>().matrix();
}

// One draw of the two-network feature kernel for K1/K0.
Matrix feature_sample(const Matrix& xa, const Matrix& xb, const KernelConfig& cfg, double maa,
                      double mbb, double c, int width, int sample, std::uint64_t seed) {
  Matrix ga = xa.transpose();
  Matrix gb = xb.transpose();
  const double cond = std::max(0.0, mbb - (maa > 0.0 ? c * c / maa : 0.0));
  const double ca = std::sqrt(maa);
  const double cb_shared = maa > 0.0 ? c / std::sqrt(maa) : 0.0;
  const double cb_own = std::sqrt(cond);
  for (int l = 0; l < cfg.depth; ++l) {
    const Eigen::Index fan_in = ga.rows();
    const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Matrix ha(width, ga.cols());
    Matrix hb(width, gb.cols());
    for (Eigen::Index r0 = 0, blk = 0; r0 < width; r0 += kRowBlock, ++blk) {
      const Eigen::Index rows = std::min<Eigen::Index>(kRowBlock, width - r0);
      const Matrix z1 = normal_block(seed, sample, l, blk, 0, rows, fan_in);
      const Matrix z2 = normal_block(seed, sample, l, blk, 1, rows, fan_in);
      ha.middleRows(r0, rows).noalias() = (ca * scale) * (z1 * ga);
      hb.middleRows(r0, rows).noalias() = scale * ((cb_shared * z1 + cb_own * z2) * gb);
    }
    activate(ha, cfg.nonlinearity);
    activate(hb, cfg.nonlinearity);
    ga = std::move(ha);
    gb = std::move(hb);
  }
  return ga.transpose() * gb / static_cast<double>(width);
}

// One draw of the empirical NTK of f = a . phi(h^L) / sqrt(N) with all
// weights N(0, sigma^2), by exact backpropagation.
Matrix ntk_sample(const Matrix& xa, const Matrix& xb, const KernelConfig& cfg, int width,
                  int sample, std::uint64_t seed) {
  Matrix x(xa.rows() + xb.rows(), xa.cols());
  x << xa, xb;
  const double sd = std::sqrt(cfg.sigma_sq);
  std::vector<Matrix> g(cfg.depth + 1);
  std::vector<Matrix> h(cfg.depth + 1);
  g[0] = x.transpose();
  for (int l = 1; l <= cfg.depth; ++l) {
    const Eigen::Index fan_in = g[l - 1].rows();
    const double scale = sd / std::sqrt(static_cast<double>(fan_in));
    h[l].resize(width, x.rows());
    for (Eigen::Index r0 = 0, blk = 0; r0 < width; r0 += kRowBlock, ++blk) {
      const Eigen::Index rows = std::min<Eigen::Index>(kRowBlock, width - r0);
      h[l].middleRows(r0, rows).noalias() =
          scale * (normal_block(seed, sample, l, blk, 0, rows, fan_in) * g[l - 1]);
    }
    g[l] = h[l];
    activate(g[l], cfg.nonlinearity);
  }
  const Vector a = sd * normal_block(seed, sample, cfg.depth + 1, 0, 0, width, 1).col(0);
  const double n = static_cast<double>(width);
  Matrix ntk = g[cfg.depth].transpose() * g[cfg.depth] / n;
  Matrix delta = derivative(h[cfg.depth], cfg.nonlinearity).array().colwise() * a.array();
  delta /= std::sqrt(n);
  for (int l = cfg.depth; l >= 1; --l) {
    const Eigen::Index fan_in = g[l - 1].rows();
    const double fan = static_cast<double>(fan_in);
    ntk.array() += (delta.transpose() * delta).array() *
                   (g[l - 1].transpose() * g[l - 1]).array() / fan;
    if (l == 1) break;
    const double scale = sd / std::sqrt(fan);
    Matrix back = Matrix::Zero(fan_in, x.rows());
    for (Eigen::Index r0 = 0, blk = 0; r0 < width; r0 += kRowBlock, ++blk) {
      const Eigen::Index rows = std::min<Eigen::Index>(kRowBlock, width - r0);
      back.noalias() += scale * (normal_block(seed, sample, l, blk, 0, rows, fan_in).transpose() *
                                 delta.middleRows(r0, rows));
    }
    delta = derivative(h[l - 1], cfg.nonlinearity).cwiseProduct(back);
  }
  return ntk.topRightCorner(xa.rows(), xb.rows());
}

}  // namespace

McEstimate mc_kernel_estimate(const Matrix& xa, const Matrix& xb, int t, int t_prime,
                              const KernelConfig& cfg, McTarget target, int width,
                              int n_samples, std::uint64_t seed) {
  cfg.validate();
  if (width < 1) throw Error("mc_kernel_estimate: width must be >= 1");
  if (n_samples < 1) throw Error("mc_kernel_estimate: n_samples must be >= 1");
  if (xa.cols() != xb.cols() || xa.cols() != cfg.input_dim) {
    throw Error("mc_kernel_estimate: input column count differs from N0");
  }
  if (target == McTarget::Ntk && !cfg.lambda.is_infinite()) {
    throw Error("mc_kernel_estimate: NTK target requires lambda = Infinite");
  }
  const TemporalFactors f = temporal_factors(t, t_prime, cfg);
  const double maa = temporal_factors(t, t, cfg).m1;
  const double mbb = temporal_factors(t_prime, t_prime, cfg).m1;
  const double c = target == McTarget::K0 ? f.m0 : f.m1;

  Matrix sum = Matrix::Zero(xa.rows(), xb.rows());
  Matrix sum_sq = Matrix::Zero(xa.rows(), xb.rows());
  for (int s = 0; s < n_samples; ++s) {
    const Matrix k = target == McTarget::Ntk
                         ? ntk_sample(xa, xb, cfg, width, s, seed)
                         : feature_sample(xa, xb, cfg, maa, mbb, c, width, s, seed);
    sum += k;
    sum_sq += k.cwiseProduct(k);
  }
  McEstimate out;
  out.width = width;
  out.n_samples = n_samples;
  const double n = static_cast<double>(n_samples);
  out.mean = sum / n;
  if (n_samples > 1) {
    const Matrix var = ((sum_sq / n) - out.mean.cwiseProduct(out.mean)).cwiseMax(0.0) * (n / (n - 1.0));
    out.stderr_ = (var / n).cwiseSqrt();
  } else {
    out.stderr_ = Matrix::Zero(xa.rows(), xb.rows());
  }
  return out;
}

}  // namespace cltheory
