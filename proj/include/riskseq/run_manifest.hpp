#ifndef RISKSEQ_RUN_MANIFEST_HPP
#define RISKSEQ_RUN_MANIFEST_HPP

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "riskseq/checkpoint.hpp"
#include "riskseq/error.hpp"
#include "riskseq/hash.hpp"
#include "riskseq/preprocess.hpp"
#include "riskseq/schema.hpp"

namespace riskseq {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr int kRunManifestVersion = 1;

struct ManifestOutput {
  std::string path;
  std::string sha256;
  bool deterministic = true;  // false for files carrying wall-clock times
};

/// Provenance of one command run: enough to rerun it and check the outputs.
struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  std::string cwd;
  std::string config_path;
  std::string config_sha256;
  std::map<std::string, std::string> inputs;  // path -> sha256
  std::uint64_t seed = 0;
  double wall_seconds = 0.0;
  std::vector<ManifestOutput> outputs;
  nlohmann::json extra = nlohmann::json::object();

  void add_input(const std::string& path) { inputs[path] = sha256_file(path); }
  void add_output(const std::string& path, bool deterministic = true) {
    outputs.push_back({path, sha256_file(path), deterministic});
  }
};

inline nlohmann::json artifact_versions() {
  return {{"riskseq", kVersion},
          {"run_manifest", kRunManifestVersion},
          {"schema", kSchemaVersion},
          {"checkpoint", kCheckpointVersion},
          {"preprocessor", kPreprocessorVersion}};
}

inline nlohmann::json manifest_to_json(const RunManifest& m) {
  nlohmann::json outputs = nlohmann::json::array();
  for (const auto& o : m.outputs) outputs.push_back({{"path", o.path}, {"sha256", o.sha256}, {"deterministic", o.deterministic}});
  nlohmann::json j{{"format_version", kRunManifestVersion},
                   {"command", m.command},
                   {"argv", m.argv},
                   {"cwd", m.cwd},
                   {"inputs", m.inputs},
                   {"seed", m.seed},
                   {"versions", artifact_versions()},
                   {"wall_seconds", m.wall_seconds},
                   {"outputs", outputs}};
  if (!m.config_path.empty()) j["config"] = {{"path", m.config_path}, {"sha256", m.config_sha256}};
  if (!m.extra.empty()) j["extra"] = m.extra;
  return j;
}

inline RunManifest manifest_from_json(const nlohmann::json& j) {
  RunManifest m;
  try {
    m.command = j.at("command").get<std::string>();
    m.argv = j.at("argv").get<std::vector<std::string>>();
    m.cwd = j.at("cwd").get<std::string>();
    m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.wall_seconds = j.at("wall_seconds").get<double>();
    for (const auto& o : j.at("outputs"))
      m.outputs.push_back({o.at("path").get<std::string>(), o.at("sha256").get<std::string>(),
                           o.at("deterministic").get<bool>()});
    if (j.contains("config")) {
      m.config_path = j.at("config").at("path").get<std::string>();
      m.config_sha256 = j.at("config").at("sha256").get<std::string>();
    }
    if (j.contains("extra")) m.extra = j.at("extra");
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed run manifest: ") + e.what());
  }
  return m;
}

inline void write_json(const nlohmann::json& j, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << j.dump(2) << '\n';
}

inline nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
}

}  // namespace riskseq

#endif  // RISKSEQ_RUN_MANIFEST_HPP
