#include "config.hpp"
#include "experiments.hpp"
#include "output.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <chrono>
#include <ctime>
#include <iostream>
#include <thread>

using namespace cltheory::cli;

namespace {

std::string utc_now() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

int cmd_validate(const std::string& path) {
  const ExperimentConfig cfg = load_config(path);
  check_feasible(cfg);
  std::cout << "ok\n" << cfg.canonical;
  return 0;
}

int cmd_run(const std::string& path, int threads, const std::string& out_dir, std::uint64_t seed_offset) {
  const ExperimentConfig cfg = load_config(path);
  check_feasible(cfg);
  const std::string hash = sha256_hex(cfg.canonical);
  const std::filesystem::path dir = out_dir.empty() ? std::filesystem::path(cfg.output) : std::filesystem::path(out_dir);
  const std::string started = utc_now();
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<Row> rows = run_experiment(cfg, threads, seed_offset);
  const auto outputs = write_tables(dir, to_string(cfg.kind), hash, rows);
  ManifestInfo info;
  info.experiment = to_string(cfg.kind);
  info.name = cfg.name;
  info.config_path = path;
  info.config_hash = hash;
  info.canonical_config = cfg.canonical;
  info.seed_offset = seed_offset;
  info.threads = threads;
  info.started_utc = started;
  info.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_manifest(dir, info, outputs);
  fmt::print(stderr, "{}: {} rows written to {} in {:.1f}s\n", cfg.name, rows.size(), dir.string(), info.wall_seconds);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continual-learning kernel theory experiment runner"};
  app.require_subcommand(1);
  int threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  std::string out_dir;
  std::uint64_t seed_offset = 0;
  std::string config;

  CLI::App* run = app.add_subcommand("run", "Run an experiment config");
  run->add_option("config", config, "Experiment config file")->required();
  run->add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);
  run->add_option("--out-dir", out_dir, "Output directory, overrides the config");
  run->add_option("--seed-offset", seed_offset, "Added to every configured seed");

  CLI::App* validate = app.add_subcommand("validate", "Check a config without running it");
  validate->add_option("config", config, "Experiment config file")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (validate->parsed()) return cmd_validate(config);
    return cmd_run(config, threads, out_dir, seed_offset);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
