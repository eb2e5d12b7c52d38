#pragma once

#include "cltheory/dataset.hpp"
#include "cltheory/types.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace cltheory {

// Fully connected network f(x) = N^{-1/2} a . phi(z_L), z_l = fan_in^{-1/2} W_l h_{l-1}.
// Hidden weights live in one flat vector, layer l stored row-major as an
// N x fan_in block. Multi-head networks keep one readout per task.
struct MlpParams {
  int input_dim = 0;
  int width = 0;
  int depth = 1;
  Nonlinearity nonlinearity = Nonlinearity::Relu;
  Vector hidden;
  std::vector<Vector> readouts;

  Eigen::Index hidden_size() const;
  // Offset of layer l (1-based) inside `hidden`.
  Eigen::Index layer_offset(int l) const;
  int fan_in(int l) const { return l == 1 ? input_dim : width; }
};

// All weights i.i.d. N(0, sigma0^2) from a seeded stream; one readout.
MlpParams init_mlp(int input_dim, int width, int depth, Nonlinearity nl, double sigma0,
                   std::uint64_t seed);

Vector forward(const MlpParams& params, const Matrix& x, int head = 0);

struct LossGradient {
  // 0.5 * sum (f - y)^2
  double loss = 0.0;
  double mse = 0.0;
  Vector grad_hidden;
  Vector grad_readout;
};

LossGradient loss_and_gradient(const MlpParams& params, const Dataset& d, int head = 0);

enum class TrainMode { Vanilla, L2, OnlineEwc, MultiHeadWPenalty };

TrainMode parse_train_mode(const std::string& s);
std::string to_string(TrainMode m);

struct TrainConfig {
  double eta = 0.01;
  double kappa = 0.1;
  double gamma_decay = 1.0;
  double sigma0 = 1.0;
  double stop_mse = 1e-3;
  long max_steps = 100000;
  // Regularized tasks stop when |update| < update_tol * |Theta|.
  double update_tol = 1e-8;
  double divergence_loss = 1e6;
  std::uint64_t seed = 0;

  void validate() const;
};

struct StepLog {
  long steps = 0;
  double final_mse = 0.0;
  double final_update_ratio = 0.0;
  bool converged = false;
  std::string stop_reason;
};

// Diagonal Fisher entries g_i^2 / ((1/N_params) sqrt(sum_j g_j^4)) with g the
// loss gradient over all trained parameters (hidden, then readout).
Vector fisher_diag(const MlpParams& params, const Dataset& d, int head = 0);

// Owns one network across a task sequence and applies the chosen dynamics.
class ContinualTrainer {
 public:
  ContinualTrainer(MlpParams init, TrainConfig cfg, TrainMode mode);

  StepLog train_task(const Dataset& d);

  const MlpParams& params() const { return params_; }
  int tasks_seen() const { return tasks_seen_; }
  // Readout used for task index t (0-based); always 0 for single-head modes.
  int head_for(int t) const { return mode_ == TrainMode::MultiHeadWPenalty ? t : 0; }
  const Vector& fisher_bar() const { return fisher_bar_; }

 private:
  MlpParams params_;
  TrainConfig cfg_;
  TrainMode mode_;
  int tasks_seen_ = 0;
  Vector anchor_;
  Vector fisher_bar_;
  std::optional<Dataset> last_task_;
};

struct ClMetrics {
  // Entry (t, s): metric on task s after training task t (0-based).
  Matrix train_mse;
  Matrix train_loss;  // sum (f - y)^2 / |y|^2
  Matrix train_acc;
  Matrix test_mse;
  Matrix test_loss;
  Matrix test_acc;
  bool has_test = false;
  // |a_t|^2 / N per head after the final task.
  std::vector<double> readout_norms;
  std::vector<StepLog> logs;
  MlpParams final_params;
};

ClMetrics run_cl_experiment(const std::vector<Dataset>& seq, const std::optional<std::vector<Dataset>>& test,
                            const MlpParams& init, const TrainConfig& cfg, TrainMode mode);

}  // namespace cltheory
