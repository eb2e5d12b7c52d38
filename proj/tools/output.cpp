#include "output.hpp"

#include <Eigen/Core>
#include <boost/version.hpp>
#include <fmt/format.h>
#include <json.hpp>
#include <openssl/evp.h>
#include <openssl/opensslv.h>
#include <yaml-cpp/yaml.h>

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace cltheory::cli {

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (const char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string number(double v) { return fmt::format("{:.17g}", v); }

std::string key_cells(const Row& r) {
  return csv_field(r.point) + "," + (r.t ? std::to_string(*r.t) : std::string()) + "," +
         (r.alpha ? number(*r.alpha) : std::string()) + "," + csv_field(r.lambda) + "," + csv_field(r.metric);
}

void write_file(const std::filesystem::path& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("output: cannot write " + path.string());
  out << body;
  if (!out) throw Error("output: write failed for " + path.string());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::string sha256_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("output: SHA-256 failed");
  }
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", digest[i]);
  return hex;
}

std::vector<std::filesystem::path> write_tables(const std::filesystem::path& dir, const std::string& experiment,
                                                const std::string& config_hash, const std::vector<Row>& rows) {
  std::filesystem::create_directories(dir);
  const std::string exp = csv_field(experiment);

  std::string results = "experiment,seed,point,t,alpha,lambda,metric,value,config_hash\r\n";
  // Seeds are averaged per (point, t, alpha, lambda, metric) in first-seen order.
  struct Acc {
    double sum = 0.0, sum_sq = 0.0;
    int n = 0;
  };
  std::vector<std::string> order;
  std::map<std::string, Acc> acc;
  for (const Row& r : rows) {
    const std::string key = key_cells(r);
    results += exp + "," + std::to_string(r.seed) + "," + key + "," + number(r.value) + "," + config_hash + "\r\n";
    auto [it, fresh] = acc.try_emplace(key);
    if (fresh) order.push_back(key);
    it->second.sum += r.value;
    it->second.sum_sq += r.value * r.value;
    ++it->second.n;
  }

  std::string summary = "experiment,point,t,alpha,lambda,metric,mean,stderr,n,config_hash\r\n";
  for (const std::string& key : order) {
    const Acc& a = acc.at(key);
    const double mean = a.sum / a.n;
    double se = 0.0;
    if (a.n > 1) {
      const double var = std::max(0.0, (a.sum_sq - a.n * mean * mean) / (a.n - 1));
      se = std::sqrt(var / a.n);
    }
    if (!std::isfinite(mean)) se = std::numeric_limits<double>::quiet_NaN();
    summary += exp + "," + key + "," + number(mean) + "," + number(se) + "," + std::to_string(a.n) + "," +
               config_hash + "\r\n";
  }
  const auto rpath = dir / "results.csv";
  const auto spath = dir / "summary.csv";
  write_file(rpath, results);
  write_file(spath, summary);
  return {rpath, spath};
}

void write_manifest(const std::filesystem::path& dir, const ManifestInfo& info,
                    const std::vector<std::filesystem::path>& outputs) {
  nlohmann::ordered_json j;
  j["experiment"] = info.experiment;
  j["name"] = info.name;
  j["config_path"] = info.config_path;
  j["config_hash"] = info.config_hash;
  j["config"] = info.canonical_config;
  j["seed_offset"] = info.seed_offset;
  j["threads"] = info.threads;
  j["started_utc"] = info.started_utc;
  j["wall_seconds"] = info.wall_seconds;
  j["versions"] = {
      {"cltheory", CLTHEORY_VERSION},
      {"eigen", fmt::format("{}.{}.{}", EIGEN_WORLD_VERSION, EIGEN_MAJOR_VERSION, EIGEN_MINOR_VERSION)},
      {"boost", fmt::format("{}.{}.{}", BOOST_VERSION / 100000, BOOST_VERSION / 100 % 1000, BOOST_VERSION % 100)},
      {"openssl", OPENSSL_VERSION_TEXT},
      {"fmt", fmt::format("{}", FMT_VERSION)},
      {"compiler", __VERSION__},
  };
  nlohmann::ordered_json files = nlohmann::ordered_json::array();
  for (const auto& p : outputs) files.push_back({{"path", p.filename().string()}, {"sha256", sha256_hex(read_file(p))}});
  j["outputs"] = files;
  write_file(dir / "manifest.json", j.dump(2) + "\n");
}

}  // namespace cltheory::cli
