#include "config.hpp"

#include <fmt/format.h>
#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <set>
#include <sstream>
#include <type_traits>

namespace cltheory::cli {

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& msg) {
  throw Error("config: " + (path.empty() ? std::string("<root>") : path) + ": " + msg);
}

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

void check_keys(const YAML::Node& node, const std::string& path, const std::set<std::string>& allowed) {
  if (!node.IsMap()) fail(path, "expected a mapping");
  for (const auto& kv : node) {
    const std::string key = kv.first.as<std::string>();
    if (!allowed.count(key)) fail(join(path, key), "unknown field");
  }
}

template <typename T>
T scalar(const YAML::Node& node, const std::string& path) {
  if (!node.IsScalar()) fail(path, "expected a scalar");
  try {
    return node.as<T>();
  } catch (const YAML::Exception&) {
    fail(path, "cannot parse '" + node.Scalar() + "'");
  }
}

template <typename T>
void read(const YAML::Node& parent, const std::string& path, const std::string& key, T& out) {
  if (const YAML::Node n = parent[key]) out = scalar<T>(n, join(path, key));
}

template <typename T>
void read_list(const YAML::Node& parent, const std::string& path, const std::string& key, std::vector<T>& out) {
  const YAML::Node n = parent[key];
  if (!n) return;
  const std::string p = join(path, key);
  out.clear();
  if (n.IsScalar()) {
    out.push_back(scalar<T>(n, p));
  } else if (n.IsSequence()) {
    for (std::size_t i = 0; i < n.size(); ++i) out.push_back(scalar<T>(n[i], p + "[" + std::to_string(i) + "]"));
  } else {
    fail(p, "expected a scalar or a list");
  }
  if (out.empty()) fail(p, "list must not be empty");
}

Lambda parse_lambda(const std::string& s, const std::string& path) {
  if (s == "inf" || s == "infinite" || s == "Infinite") return Lambda::infinite();
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return Lambda::finite(v);
  } catch (const Error& e) {
    fail(path, e.what());
  } catch (const std::exception&) {
    fail(path, "expected a positive number or 'inf', got '" + s + "'");
  }
}

ExperimentKind parse_kind(const std::string& s, const std::string& path) {
  for (const ExperimentKind k : {ExperimentKind::OpsSweep, ExperimentKind::SingleHeadSequence,
                                 ExperimentKind::MultiHeadPhase, ExperimentKind::GdCrosscheck,
                                 ExperimentKind::LambdaSweep}) {
    if (to_string(k) == s) return k;
  }
  fail(path, "unknown experiment kind '" + s + "'");
}

GeneratorKind parse_generator(const std::string& s, const std::string& path) {
  for (const GeneratorKind k : {GeneratorKind::TargetDistractor, GeneratorKind::Permutation,
                                GeneratorKind::SplitPartial, GeneratorKind::SplitDisjoint, GeneratorKind::Teacher}) {
    if (to_string(k) == s) return k;
  }
  fail(path, "unknown generator '" + s + "'");
}

std::filesystem::path resolve_path(const std::string& p) {
  const std::filesystem::path path(p);
  if (path.is_absolute()) return path;
  if (const char* root = std::getenv("CLTHEORY_DATA_ROOT")) return std::filesystem::path(root) / path;
  return path;
}

// Shortest round-trip text, so 0.1 is echoed as 0.1.
YAML::Node number(double v) { return YAML::Node(fmt::format("{}", v)); }

template <typename T>
YAML::Node seq(const std::vector<T>& v) {
  YAML::Node n(YAML::NodeType::Sequence);
  for (const T& x : v) {
    if constexpr (std::is_floating_point_v<T>) {
      n.push_back(number(x));
    } else {
      n.push_back(x);
    }
  }
  n.SetStyle(YAML::EmitterStyle::Flow);
  return n;
}

std::string canonical_yaml(const ExperimentConfig& c) {
  YAML::Node root;
  root["experiment"] = to_string(c.kind);
  root["name"] = c.name;
  root["seeds"] = seq(c.seeds);
  YAML::Node k;
  k["depth"] = c.kernel.depth;
  k["nonlinearity"] = to_string(c.kernel.nonlinearity);
  k["sigma_sq"] = number(c.kernel.sigma_sq);
  std::vector<std::string> lams;
  for (const Lambda& l : c.lambdas) lams.push_back(l.to_string());
  k["lambda"] = seq(lams);
  root["kernel"] = k;
  root["alpha"] = seq(c.alphas);
  root["normalize_labels"] = c.normalize_labels;
  root["output"] = c.output;
  YAML::Node s;
  const SourceSpec& sp = c.source.spec;
  switch (sp.format) {
    case SourceFormat::NpySynthetic:
      s["format"] = "synthetic";
      s["rows"] = sp.synthetic_rows;
      s["cols"] = sp.synthetic_cols;
      s["classes"] = sp.synthetic_classes;
      s["seed"] = sp.seed;
      break;
    case SourceFormat::Idx:
      s["format"] = "idx";
      s["path"] = sp.path;
      s["labels_path"] = sp.labels_path;
      break;
    case SourceFormat::CifarBinary:
      s["format"] = "cifar";
      s["path"] = sp.path;
      s["fine_labels"] = sp.cifar_fine;
      break;
  }
  s["max_rows"] = c.source.max_rows;
  s["preprocess"] = c.source.preprocess;
  root["source"] = s;
  YAML::Node g;
  const GeneratorConfig& gc = c.generator;
  g["kind"] = to_string(gc.kind);
  g["p"] = gc.p;
  g["p_test"] = gc.p_test;
  g["tasks"] = gc.tasks;
  g["test_noise"] = number(gc.test_noise);
  switch (gc.kind) {
    case GeneratorKind::TargetDistractor:
      g["rho_shared"] = seq(gc.rho_shared);
      g["rho_target"] = seq(gc.rho_target);
      g["rho_flip"] = seq(gc.rho_flip);
      g["target_fraction"] = number(gc.target_fraction);
      break;
    case GeneratorKind::Permutation:
      g["ratio"] = seq(gc.ratio);
      g["permute_first"] = gc.permute_first;
      break;
    case GeneratorKind::SplitPartial:
      g["percent"] = seq(gc.percent);
      break;
    case GeneratorKind::SplitDisjoint:
      g["classes_per_task"] = gc.classes_per_task;
      break;
    case GeneratorKind::Teacher:
      g["overlap"] = seq(gc.overlap);
      g["shared_inputs"] = number(gc.shared_inputs);
      g["input_dim"] = gc.input_dim;
      break;
  }
  root["generator"] = g;
  if (c.kind == ExperimentKind::GdCrosscheck) {
    YAML::Node t;
    const TrainConfig& tc = c.train.cfg;
    t["mode"] = to_string(c.train.mode);
    t["width"] = c.train.width;
    t["eta"] = number(tc.eta);
    t["kappa"] = number(tc.kappa);
    t["gamma_decay"] = number(tc.gamma_decay);
    t["sigma0"] = number(tc.sigma0);
    t["stop_mse"] = number(tc.stop_mse);
    t["max_steps"] = tc.max_steps;
    t["update_tol"] = number(tc.update_tol);
    root["train"] = t;
  }
  YAML::Emitter out;
  out << root;
  return std::string(out.c_str()) + "\n";
}

}  // namespace

std::string to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::OpsSweep: return "ops-sweep";
    case ExperimentKind::SingleHeadSequence: return "single-head-sequence";
    case ExperimentKind::MultiHeadPhase: return "multi-head-phase";
    case ExperimentKind::GdCrosscheck: return "gd-crosscheck";
    case ExperimentKind::LambdaSweep: return "lambda-sweep";
  }
  return "unknown";
}

std::string to_string(GeneratorKind k) {
  switch (k) {
    case GeneratorKind::TargetDistractor: return "target-distractor";
    case GeneratorKind::Permutation: return "permutation";
    case GeneratorKind::SplitPartial: return "split-partial";
    case GeneratorKind::SplitDisjoint: return "split-disjoint";
    case GeneratorKind::Teacher: return "teacher";
  }
  return "unknown";
}

ExperimentConfig load_config(const std::string& file) {
  YAML::Node root;
  try {
    root = YAML::LoadFile(file);
  } catch (const YAML::BadFile&) {
    throw Error("config: cannot open '" + file + "'");
  } catch (const YAML::ParserException& e) {
    throw Error(std::string("config: parse error: ") + e.what());
  }
  check_keys(root, "", {"experiment", "name", "seeds", "kernel", "alpha", "normalize_labels", "source",
                        "generator", "train", "output"});
  ExperimentConfig c;
  if (!root["experiment"]) fail("experiment", "required field missing");
  c.kind = parse_kind(scalar<std::string>(root["experiment"], "experiment"), "experiment");
  c.name = std::filesystem::path(file).stem().string();
  read(root, "", "name", c.name);
  if (!root["seeds"]) fail("seeds", "required field missing");
  read_list(root, "", "seeds", c.seeds);
  read(root, "", "normalize_labels", c.normalize_labels);
  read(root, "", "output", c.output);
  if (c.output.empty()) fail("output", "must not be empty");

  c.lambdas = {Lambda::infinite()};
  if (const YAML::Node k = root["kernel"]) {
    check_keys(k, "kernel", {"depth", "nonlinearity", "sigma_sq", "lambda"});
    read(k, "kernel", "depth", c.kernel.depth);
    if (k["nonlinearity"]) {
      try {
        c.kernel.nonlinearity = parse_nonlinearity(scalar<std::string>(k["nonlinearity"], "kernel.nonlinearity"));
      } catch (const Error& e) {
        fail("kernel.nonlinearity", e.what());
      }
    }
    read(k, "kernel", "sigma_sq", c.kernel.sigma_sq);
    std::vector<std::string> lams;
    read_list(k, "kernel", "lambda", lams);
    if (!lams.empty()) {
      c.lambdas.clear();
      for (std::size_t i = 0; i < lams.size(); ++i)
        c.lambdas.push_back(parse_lambda(lams[i], "kernel.lambda[" + std::to_string(i) + "]"));
    }
  }
  if (c.kernel.depth < 1) fail("kernel.depth", "must be >= 1");
  if (!(c.kernel.sigma_sq > 0.0)) fail("kernel.sigma_sq", "must be positive");

  c.alphas = {0.5};
  read_list(root, "", "alpha", c.alphas);
  for (const double a : c.alphas)
    if (!(a > 0.0)) fail("alpha", "entries must be positive");

  SourceSpec& sp = c.source.spec;
  sp.format = SourceFormat::NpySynthetic;
  sp.synthetic_rows = 3000;
  sp.synthetic_cols = 100;
  if (const YAML::Node s = root["source"]) {
    check_keys(s, "source", {"format", "path", "labels_path", "fine_labels", "rows", "cols", "classes", "seed",
                             "max_rows", "preprocess"});
    std::string fmt = "synthetic";
    read(s, "source", "format", fmt);
    if (fmt == "synthetic") {
      sp.format = SourceFormat::NpySynthetic;
    } else if (fmt == "idx") {
      sp.format = SourceFormat::Idx;
    } else if (fmt == "cifar") {
      sp.format = SourceFormat::CifarBinary;
    } else {
      fail("source.format", "expected synthetic, idx or cifar, got '" + fmt + "'");
    }
    read(s, "source", "path", sp.path);
    read(s, "source", "labels_path", sp.labels_path);
    read(s, "source", "fine_labels", sp.cifar_fine);
    read(s, "source", "rows", sp.synthetic_rows);
    read(s, "source", "cols", sp.synthetic_cols);
    read(s, "source", "classes", sp.synthetic_classes);
    read(s, "source", "seed", sp.seed);
    read(s, "source", "max_rows", c.source.max_rows);
    read(s, "source", "preprocess", c.source.preprocess);
  }
  if (sp.format != SourceFormat::NpySynthetic && sp.path.empty()) fail("source.path", "required for file sources");
  if (sp.format == SourceFormat::Idx && sp.labels_path.empty()) fail("source.labels_path", "required for idx");
  if (sp.format == SourceFormat::NpySynthetic && (sp.synthetic_rows < 2 || sp.synthetic_cols < 1)) {
    fail("source.rows", "synthetic pool needs rows >= 2 and cols >= 1");
  }
  if (c.source.max_rows < 0) fail("source.max_rows", "must be >= 0");

  GeneratorConfig& g = c.generator;
  if (const YAML::Node n = root["generator"]) {
    check_keys(n, "generator", {"kind", "p", "p_test", "tasks", "rho_shared", "rho_target", "rho_flip",
                                "target_fraction", "ratio", "permute_first", "percent", "classes_per_task",
                                "overlap", "shared_inputs", "input_dim", "test_noise"});
    if (n["kind"]) g.kind = parse_generator(scalar<std::string>(n["kind"], "generator.kind"), "generator.kind");
    read(n, "generator", "p", g.p);
    read(n, "generator", "p_test", g.p_test);
    read(n, "generator", "tasks", g.tasks);
    read_list(n, "generator", "rho_shared", g.rho_shared);
    read_list(n, "generator", "rho_target", g.rho_target);
    read_list(n, "generator", "rho_flip", g.rho_flip);
    read(n, "generator", "target_fraction", g.target_fraction);
    read_list(n, "generator", "ratio", g.ratio);
    read(n, "generator", "permute_first", g.permute_first);
    read_list(n, "generator", "percent", g.percent);
    read(n, "generator", "classes_per_task", g.classes_per_task);
    read_list(n, "generator", "overlap", g.overlap);
    read(n, "generator", "shared_inputs", g.shared_inputs);
    read(n, "generator", "input_dim", g.input_dim);
    read(n, "generator", "test_noise", g.test_noise);
  }
  if (g.p < 1) fail("generator.p", "must be >= 1");
  if (g.p_test < 0) fail("generator.p_test", "must be >= 0");
  if (g.tasks < 2) fail("generator.tasks", "must be >= 2");
  if (g.test_noise < 0.0) fail("generator.test_noise", "must be >= 0");
  if (g.kind == GeneratorKind::Teacher && g.tasks != 2) fail("generator.tasks", "teacher generator makes pairs");

  if (const YAML::Node t = root["train"]) {
    if (c.kind != ExperimentKind::GdCrosscheck) fail("train", "only used by gd-crosscheck");
    check_keys(t, "train", {"mode", "width", "eta", "kappa", "gamma_decay", "sigma0", "stop_mse", "max_steps",
                            "update_tol"});
    if (t["mode"]) {
      try {
        c.train.mode = parse_train_mode(scalar<std::string>(t["mode"], "train.mode"));
      } catch (const Error& e) {
        fail("train.mode", e.what());
      }
    }
    TrainConfig& tc = c.train.cfg;
    read(t, "train", "width", c.train.width);
    read(t, "train", "eta", tc.eta);
    read(t, "train", "kappa", tc.kappa);
    read(t, "train", "gamma_decay", tc.gamma_decay);
    read(t, "train", "sigma0", tc.sigma0);
    read(t, "train", "stop_mse", tc.stop_mse);
    read(t, "train", "max_steps", tc.max_steps);
    read(t, "train", "update_tol", tc.update_tol);
    try {
      tc.validate();
    } catch (const Error& e) {
      fail("train", e.what());
    }
    if (c.train.width < 1) fail("train.width", "must be >= 1");
  }
  if (c.kind == ExperimentKind::MultiHeadPhase && c.kernel.depth != 1) {
    fail("kernel.depth", "multi-head-phase supports depth 1 only");
  }
  if (c.kind == ExperimentKind::LambdaSweep && c.alphas.size() != 1) {
    fail("alpha", "lambda-sweep takes a single load");
  }
  c.canonical = canonical_yaml(c);
  return c;
}

void check_feasible(const ExperimentConfig& c) {
  const SourceSpec& sp = c.source.spec;
  if (sp.format != SourceFormat::NpySynthetic) {
    if (!std::filesystem::exists(resolve_path(sp.path))) {
      fail("source.path", "file not found: " + resolve_path(sp.path).string());
    }
    if (sp.format == SourceFormat::Idx && !std::filesystem::exists(resolve_path(sp.labels_path))) {
      fail("source.labels_path", "file not found: " + resolve_path(sp.labels_path).string());
    }
  }
  const GeneratorConfig& g = c.generator;
  if (g.kind == GeneratorKind::TargetDistractor) {
    for (const double s : g.rho_shared)
      for (const double t : g.rho_target)
        for (const double f : g.rho_flip) {
          TargetDistractorParams prm;
          prm.rho_shared = s;
          prm.rho_target = t;
          prm.rho_flip = f;
          prm.target_fraction = g.target_fraction;
          prm.p = g.p;
          prm.t = g.tasks;
          try {
            prm.validate();
          } catch (const Error& e) {
            std::ostringstream os;
            os << "grid point (rho_shared=" << s << ", rho_target=" << t << ", rho_flip=" << f << "): " << e.what();
            fail("generator", os.str());
          }
        }
  }
  for (const double r : g.ratio)
    if (r < 0.0 || r > 1.0) fail("generator.ratio", "entries must be in [0, 1]");
  for (const double x : g.percent)
    if (x < 0.0 || x > 100.0) fail("generator.percent", "entries must be in [0, 100]");
  for (const double o : g.overlap)
    if (o < -1.0 || o > 1.0) fail("generator.overlap", "entries must be in [-1, 1]");
  if (g.shared_inputs < 0.0 || g.shared_inputs > 1.0) fail("generator.shared_inputs", "must be in [0, 1]");
}

}  // namespace cltheory::cli
