#pragma once

#include "cltheory/gdsim.hpp"
#include "cltheory/kernel.hpp"
#include "cltheory/taskgen.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace cltheory::cli {

enum class ExperimentKind { OpsSweep, SingleHeadSequence, MultiHeadPhase, GdCrosscheck, LambdaSweep };

std::string to_string(ExperimentKind k);

enum class GeneratorKind { TargetDistractor, Permutation, SplitPartial, SplitDisjoint, Teacher };

std::string to_string(GeneratorKind k);

// Where images come from. Relative paths resolve against CLTHEORY_DATA_ROOT.
struct SourceConfig {
  SourceSpec spec;
  int max_rows = 0;  // 0 keeps every row
  bool preprocess = true;
};

// One axis value per grid point; every list must be non-empty.
struct GeneratorConfig {
  GeneratorKind kind = GeneratorKind::TargetDistractor;
  int p = 200;
  int p_test = 0;
  int tasks = 2;
  // target-distractor
  std::vector<double> rho_shared{0.5};
  std::vector<double> rho_target{0.5};
  std::vector<double> rho_flip{0.0};
  double target_fraction = 0.1;
  // permutation
  std::vector<double> ratio{0.1};
  bool permute_first = false;
  // split
  std::vector<double> percent{50.0};
  int classes_per_task = 2;
  // teacher
  std::vector<double> overlap{0.5};
  double shared_inputs = 0.5;
  int input_dim = 100;
  // test-set fallback when the generator has no held-out split
  double test_noise = 0.1;
};

struct TrainSection {
  TrainConfig cfg;
  TrainMode mode = TrainMode::L2;
  int width = 2048;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::OpsSweep;
  std::string name;
  std::vector<std::uint64_t> seeds;
  KernelConfig kernel;  // input_dim is filled from the data
  std::vector<Lambda> lambdas;
  std::vector<double> alphas;
  bool normalize_labels = true;
  SourceConfig source;
  GeneratorConfig generator;
  TrainSection train;
  std::string output = "results";  // directory, overridden by --out-dir
  std::string canonical;  // resolved config as YAML, hashed into every row
};

// Parses and checks a config file. Errors name the offending field.
ExperimentConfig load_config(const std::string& path);

// Feasibility checks that need no heavy computation: generator constraints
// for every grid point and data-path existence.
void check_feasible(const ExperimentConfig& cfg);

}  // namespace cltheory::cli
