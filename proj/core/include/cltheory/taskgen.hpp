#pragma once

#include "cltheory/dataset.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace cltheory {

// Raw labeled examples, one image per row.
struct LabeledPool {
  Matrix images;
  std::vector<int> labels;
};

struct TaskPair {
  Dataset train;
  std::optional<Dataset> test;
};

// Center columns, ZCA-whiten with eigenvalue floor 1e-8 * lambda_max, then
// rescale every nonzero row to squared norm N0.
Matrix preprocess(const Matrix& raw);

// Rescale every nonzero row to squared norm equal to the column count.
Matrix renormalize_rows(const Matrix& x);

struct TargetDistractorParams {
  double rho_shared = 0.0;
  double rho_target = 0.0;
  double rho_flip = 0.0;
  double target_fraction = 0.1;
  int p = 100;
  int t = 2;
  std::uint64_t seed = 0;

  // Throws naming the violated constraint.
  void validate() const;
};

// Composition counts per task.
struct TargetDistractorCounts {
  int n_target = 0;
  int n_shared_target = 0;
  int n_shared_distractor = 0;
  int pool_rows_needed = 0;
};

TargetDistractorCounts target_distractor_counts(const TargetDistractorParams& params);

// Tasks whose first rows (shared targets, then shared distractors) are common
// to all tasks. Targets carry +-1 labels, distractors 0. Shared target labels
// of task t >= 2 are flipped i.i.d. with probability rho_flip relative to
// task 1.
std::vector<Dataset> gen_target_distractor(const Matrix& pool, const TargetDistractorParams& params);

// Pixel permutation of task `task_index` touching ceil(ratio * n0) positions
// in a single random cycle, so every chosen pixel moves. perm[j] is the source
// column of output column j.
std::vector<int> pixel_permutation(int n0, double ratio, std::uint64_t seed, int task_index);

Matrix apply_permutation(const Matrix& x, const std::vector<int>& perm);

// Binary task from a labeled pool: classes are split at random into two
// halves labeled +1 and -1, then p train and p_test test rows are drawn
// without replacement. Rows are copied as given.
TaskPair binary_task(const LabeledPool& pool, int p, int p_test, std::uint64_t seed);

// T tasks from one base pair. Task 1 keeps the base pixels unless
// permute_first is set.
std::vector<TaskPair> gen_permutation(const TaskPair& base, double ratio, int t, std::uint64_t seed,
                                      bool permute_first);

enum class SplitMode { Disjoint, Partial };

struct SplitParams {
  SplitMode mode = SplitMode::Disjoint;
  // Split percentage for Partial, in [0, 100].
  double partial_percent = 0.0;
  // Classes per task in Disjoint mode (2 for MNIST-style, 4 for CIFAR-style).
  int classes_per_task = 2;
  // Partial mode classes: pair one and pair two. The first class of each pair
  // is labeled +1, the second -1.
  std::array<int, 2> pair_one{0, 1};
  std::array<int, 2> pair_two{2, 3};
  int p = 100;
  std::uint64_t seed = 0;
};

// Class-split tasks. Disjoint: consecutive class groups, first half of each
// group labeled +1. Partial: two tasks drawing (x/2 + 50)% and (50 - x/2)% of
// their examples from pair one.
std::vector<Dataset> gen_split(const LabeledPool& source, const SplitParams& params);

// S + 2 datasets; dataset s takes rows [0, k) of D2 and [k, P) of D1 with
// k = floor(P s / (S + 1)).
std::vector<Dataset> gen_interpolated(const Dataset& d1, const Dataset& d2, int s);

// Appends a task-specific N(0,1) context vector of length n_context to every
// row, then renormalizes rows to the new input dimension. The vector of task
// i depends only on (seed, i), so train and test lists share it.
std::vector<Dataset> append_context(const std::vector<Dataset>& seq, int n_context,
                                    std::uint64_t seed);

// Copy with i.i.d. N(0, noise^2) input perturbations, rows renormalized.
Dataset perturbed_copy(const Dataset& d, double noise, std::uint64_t seed, int task_index);

// Gaussian teacher-student pair: inputs N(0,1) in n0 dims after renormalization,
// labels sign(w_i . x) with teacher overlap cos(w1, w2) = teacher_overlap and
// a fraction shared_inputs of input rows common to both tasks.
std::vector<Dataset> gen_teacher_pair(int p, int n0, double teacher_overlap, double shared_inputs,
                                      std::uint64_t seed);

enum class SourceFormat { Idx, CifarBinary, NpySynthetic };

struct SourceSpec {
  SourceFormat format = SourceFormat::NpySynthetic;
  std::string path;         // IDX images or CIFAR binary
  std::string labels_path;  // IDX labels
  bool cifar_fine = false;  // CIFAR-100: fine (true) or coarse (false) label
  int synthetic_rows = 0;
  int synthetic_cols = 0;
  int synthetic_classes = 10;
  std::uint64_t seed = 0;
};

LabeledPool load_idx(const std::string& images_path, const std::string& labels_path);
LabeledPool load_cifar100(const std::string& path, bool fine_labels);
LabeledPool synthetic_pool(int rows, int cols, int n_classes, std::uint64_t seed);
LabeledPool load_source(const SourceSpec& spec);

}  // namespace cltheory
