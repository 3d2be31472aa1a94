// Run manifests: written before a command produces outputs; consumers verify
// input content hashes before trusting an artifact.
#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include <json.hpp>

#include "imposters/util.hpp"

namespace imposters {

inline constexpr const char* kArtifactVersion = "0.1.0";

struct RunManifest {
  std::string command;
  nlohmann::json config;
  std::uint64_t seed = 0;
  std::string version = kArtifactVersion;
  std::string outputDir;
  std::map<std::string, std::string> inputHashes;  // artifact name -> hex hash

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["command"] = command;
    j["config"] = config;
    j["seed"] = seed;
    j["version"] = version;
    j["outputDir"] = outputDir;
    j["inputHashes"] = inputHashes;
    return j;
  }

  static RunManifest from_json(const nlohmann::json& j) {
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    m.config = j.value("config", nlohmann::json::object());
    m.seed = j.at("seed").get<std::uint64_t>();
    m.version = j.at("version").get<std::string>();
    m.outputDir = j.value("outputDir", "");
    if (j.contains("inputHashes"))
      m.inputHashes = j["inputHashes"].get<std::map<std::string, std::string>>();
    return m;
  }
};

inline void write_manifest(const RunManifest& m, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "manifest.json");
  if (!out) throw ConfigError("cannot write manifest in " + dir.string());
  out << m.to_json().dump(2) << "\n";
}

inline RunManifest read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw ConfigError("missing manifest: " + (dir / "manifest.json").string());
  nlohmann::json j;
  in >> j;
  return RunManifest::from_json(j);
}

// Verifies a recorded hash against the current content of an artifact.
inline void check_input_hash(const std::string& artifactName, const std::string& recorded,
                             std::uint64_t actual) {
  if (recorded != hex64(actual))
    throw HashMismatchError("input hash mismatch for artifact '" + artifactName +
                            "': manifest says " + recorded + ", found " + hex64(actual));
}

}  // namespace imposters
