// SGD with momentum, parameter freezing, and the binary checkpoint format.
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include <json.hpp>

#include "imposters/graph.hpp"
#include "imposters/tensor.hpp"
#include "imposters/util.hpp"

namespace imposters {

struct OptimizerConfig {
  double learningRate = 1e-2;
  double momentum = 0.9;
  int batchSize = 8;
  int epochs = 10;
  std::uint64_t seed = 0;

  void validate() const {
    if (learningRate <= 0) throw ConfigError("learningRate must be positive");
    if (batchSize < 1) throw ConfigError("batchSize must be >= 1");
  }
};

class SgdOptimizer {
 public:
  // p <- p - lr * v with v <- momentum * v + grad; frozen parameters are
  // left bitwise untouched.
  void step(ParameterSet& params, const GradMap& grads, const OptimizerConfig& cfg) {
    cfg.validate();
    for (auto& [name, value] : params.values) {
      if (params.frozen.at(name)) continue;
      auto git = grads.find(name);
      if (git == grads.end())
        throw NumericalError("sgd_step: missing gradient for parameter " + name);
      auto& v = velocity_[name];
      if (v.data.empty()) v = Tensor(value.shape);
      const Tensor& g = git->second;
      if (g.shape != value.shape)
        throw ShapeError("sgd_step: gradient shape mismatch for " + name);
      for (std::size_t i = 0; i < value.data.size(); ++i) {
        v.data[i] = cfg.momentum * v.data[i] + g.data[i];
        value.data[i] -= cfg.learningRate * v.data[i];
      }
    }
  }

  void reset() { velocity_.clear(); }

 private:
  std::map<std::string, Tensor> velocity_;
};

// Checkpoint: one JSON header line (version, names, shapes, frozen flags,
// byte offsets), then raw little-endian doubles.
inline void save_checkpoint(const ParameterSet& params, const std::filesystem::path& path,
                            const nlohmann::json& extra = {}) {
  nlohmann::json header;
  header["version"] = 1;
  if (!extra.is_null() && !extra.empty()) header["extra"] = extra;
  std::uint64_t offset = 0;
  auto& names = header["names"] = nlohmann::json::array();
  auto& shapes = header["shapes"] = nlohmann::json::array();
  auto& frozen = header["frozen"] = nlohmann::json::array();
  auto& offsets = header["offsets"] = nlohmann::json::array();
  for (const auto& [name, t] : params.values) {
    names.push_back(name);
    shapes.push_back(t.shape);
    frozen.push_back(params.frozen.at(name));
    offsets.push_back(offset);
    offset += t.numel() * sizeof(double);
  }
  header["totalBytes"] = offset;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write checkpoint: " + path.string());
  out << header.dump() << "\n";
  for (const auto& [name, t] : params.values)
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(double)));
}

inline ParameterSet load_checkpoint(const std::filesystem::path& path,
                                    nlohmann::json* extraOut = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read checkpoint: " + path.string());
  std::string headerLine;
  std::getline(in, headerLine);
  const nlohmann::json header = nlohmann::json::parse(headerLine);
  if (header.at("version").get<int>() != 1)
    throw ConfigError("unsupported checkpoint version");
  if (extraOut && header.contains("extra")) *extraOut = header["extra"];
  ParameterSet ps;
  const auto& names = header.at("names");
  const auto& shapes = header.at("shapes");
  const auto& frozen = header.at("frozen");
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < names.size(); ++i) {
    Tensor t(shapes[i].get<std::vector<int>>());
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    if (!in) throw ConfigError("truncated checkpoint: " + path.string());
    total += t.numel() * sizeof(double);
    ps.add(names[i].get<std::string>(), std::move(t), frozen[i].get<bool>());
  }
  if (total != header.at("totalBytes").get<std::uint64_t>())
    throw ConfigError("checkpoint length mismatch: " + path.string());
  return ps;
}

}  // namespace imposters
