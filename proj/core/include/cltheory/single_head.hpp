#pragma once

#include "cltheory/dataset.hpp"
#include "cltheory/kernel.hpp"
#include "cltheory/linalg.hpp"

#include <map>
#include <optional>
#include <utility>
#include <vector>

namespace cltheory {

enum class SolveMode { FullGibbs, RandomFeature };

// Mean-predictor state after learning a task sequence with one shared readout.
// At lambda = Infinite in FullGibbs mode v_means[t] for t >= 2 holds v_t/lambda
// (the matching kernel blocks are stored multiplied by lambda).
struct SingleHeadSolution {
  KernelConfig cfg;
  SolveMode mode = SolveMode::FullGibbs;
  std::vector<Dataset> tasks;
  std::vector<Vector> v_means;
  // Training blocks K~_{t,t'} for t >= t' (1-based keys).
  std::map<std::pair<int, int>, KernelSet> kernel_cache;

  int num_tasks() const { return static_cast<int>(tasks.size()); }
};

SingleHeadSolution fit_sequence(const std::vector<Dataset>& seq, const KernelConfig& cfg,
                                SolveMode mode);

// Mean output after the last task.
Vector predict(const SingleHeadSolution& sol, const Matrix& x_query);
// Mean output after task `time` (1 <= time <= T); uses only v_1..v_time.
Vector predict_at(const SingleHeadSolution& sol, const Matrix& x_query, int time);

// Posterior variance of the output after the last task (FullGibbs only).
Vector predictor_variance(const SingleHeadSolution& sol, const Matrix& x_query);

// Normalized loss sum (pred - y)^2 / |Y|^2.
double loss(const Vector& pred, const Vector& y);

// Largest |re-substituted recursion residual| / |Y_t| over tasks.
double recursion_residual(const SingleHeadSolution& sol);

struct ForgettingResult {
  Matrix f;  // f(t-1, t'-1): train loss on task t' after learning task t
  Matrix g;  // test loss on t' after t over the single-task test loss of t'
  bool has_g = false;
};

ForgettingResult forgetting_matrix(const std::vector<Dataset>& train, const KernelConfig& cfg,
                                   SolveMode mode,
                                   const std::optional<std::vector<Dataset>>& test = std::nullopt);

}  // namespace cltheory
