#pragma once

#include "experiments.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace cltheory::cli {

// Lowercase hex SHA-256.
std::string sha256_hex(const std::string& data);

// Writes results.csv (one row per metric value) and summary.csv (mean,
// standard error and count across seeds). Returns the paths written.
std::vector<std::filesystem::path> write_tables(const std::filesystem::path& dir, const std::string& experiment,
                                                const std::string& config_hash, const std::vector<Row>& rows);

struct ManifestInfo {
  std::string experiment;
  std::string name;
  std::string config_path;
  std::string config_hash;
  std::string canonical_config;
  std::uint64_t seed_offset = 0;
  int threads = 1;
  double wall_seconds = 0.0;
  std::string started_utc;
};

// manifest.json with config hash, library versions, wall time and a SHA-256
// of every output file.
void write_manifest(const std::filesystem::path& dir, const ManifestInfo& info,
                    const std::vector<std::filesystem::path>& outputs);

}  // namespace cltheory::cli
