#include "cltheory/rng.hpp"
#include "cltheory/taskgen.hpp"

#include <boost/random/normal_distribution.hpp>

#include <fstream>
#include <iterator>

namespace cltheory {

namespace {

std::vector<unsigned char> read_all(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("loader: cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

}  // namespace

LabeledPool load_idx(const std::string& images_path, const std::string& labels_path) {
  const auto img = read_all(images_path);
  const auto lab = read_all(labels_path);
  if (img.size() < 16 || be32(img, 0) != 0x00000803) throw Error("idx: bad image magic in " + images_path);
  if (lab.size() < 8 || be32(lab, 0) != 0x00000801) throw Error("idx: bad label magic in " + labels_path);
  const std::size_t n = be32(img, 4);
  const std::size_t rows = be32(img, 8);
  const std::size_t cols = be32(img, 12);
  if (be32(lab, 4) != n) throw Error("idx: image and label counts differ");
  const std::size_t dim = rows * cols;
  if (img.size() != 16 + n * dim) throw Error("idx: truncated image file " + images_path);
  if (lab.size() != 8 + n) throw Error("idx: truncated label file " + labels_path);
  LabeledPool pool;
  pool.images.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  pool.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < dim; ++j) pool.images(i, j) = img[16 + i * dim + j] / 255.0;
    pool.labels[i] = lab[8 + i];
  }
  return pool;
}

LabeledPool load_cifar100(const std::string& path, bool fine_labels) {
  constexpr std::size_t kPixels = 1024;
  constexpr std::size_t kRecord = 2 + 3 * kPixels;
  const auto buf = read_all(path);
  if (buf.empty() || buf.size() % kRecord != 0) {
    throw Error("cifar: file size is not a multiple of the record size: " + path);
  }
  const std::size_t n = buf.size() / kRecord;
  LabeledPool pool;
  pool.images.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(kPixels));
  pool.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char* rec = buf.data() + i * kRecord;
    pool.labels[i] = fine_labels ? rec[1] : rec[0];
    const unsigned char* px = rec + 2;
    for (std::size_t j = 0; j < kPixels; ++j) {
      pool.images(i, j) =
          (0.299 * px[j] + 0.587 * px[kPixels + j] + 0.114 * px[2 * kPixels + j]) / 255.0;
    }
  }
  return pool;
}

// Gaussian class clusters: class c has mean mu_c ~ N(0, I), examples add
// N(0, I) noise.
LabeledPool synthetic_pool(int rows, int cols, int n_classes, std::uint64_t seed) {
  if (rows < 1 || cols < 1 || n_classes < 1) throw Error("synthetic: rows, cols, classes must be >= 1");
  boost::random::normal_distribution<double> nd(0.0, 1.0);
  CounterRng mean_rng(seed, 0, "synthetic-means");
  Matrix means(n_classes, cols);
  for (int c = 0; c < n_classes; ++c)
    for (int j = 0; j < cols; ++j) means(c, j) = nd(mean_rng);
  CounterRng rng(seed, 0, "synthetic-examples");
  LabeledPool pool;
  pool.images.resize(rows, cols);
  pool.labels.resize(static_cast<std::size_t>(rows));
  for (int i = 0; i < rows; ++i) {
    const int c = i % n_classes;
    pool.labels[static_cast<std::size_t>(i)] = c;
    for (int j = 0; j < cols; ++j) pool.images(i, j) = means(c, j) + nd(rng);
  }
  return pool;
}

LabeledPool load_source(const SourceSpec& spec) {
  switch (spec.format) {
    case SourceFormat::Idx:
      return load_idx(spec.path, spec.labels_path);
    case SourceFormat::CifarBinary:
      return load_cifar100(spec.path, spec.cifar_fine);
    case SourceFormat::NpySynthetic:
      return synthetic_pool(spec.synthetic_rows, spec.synthetic_cols, spec.synthetic_classes, spec.seed);
  }
  throw Error("loader: unknown source format");
}

}  // namespace cltheory
