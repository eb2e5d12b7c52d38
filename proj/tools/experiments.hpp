#pragma once

#include "config.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace cltheory::cli {

// One long-format result row. Empty optionals are written as empty cells.
struct Row {
  std::uint64_t seed = 0;
  std::string point;  // generator grid point label, "all" for cross-point rows
  std::optional<int> t;
  std::optional<double> alpha;
  std::string lambda;
  std::string metric;
  double value = 0.0;
};

// Runs every grid point of the experiment on `threads` workers. Rows come
// back in grid order (seed, point, inner axes) whatever the completion order.
std::vector<Row> run_experiment(const ExperimentConfig& cfg, int threads, std::uint64_t seed_offset);

}  // namespace cltheory::cli
