// Imposter selection: score a synthetic pool with the discriminator and keep
// the top-k samples that best pass as real.
#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include <json.hpp>

#include "imposters/dataset.hpp"
#include "imposters/discriminator.hpp"
#include "imposters/util.hpp"

namespace imposters {

struct ScoredSample {
  int sampleIndex;
  double score;
};

struct ImposterSet {
  std::vector<ScoredSample> entries;  // descending score, unique indices
  int k = 0;
  std::string poolId;
  bool truncated = false;  // k exceeded the pool size
};

inline std::vector<ScoredSample> score_pool(const DiscriminatorModel& model,
                                            const LabeledDataset& pool, int jobs = 1) {
  if (pool.items.empty()) throw std::domain_error("score_pool: empty pool");
  std::vector<ScoredSample> out(pool.items.size());
  parallel_for(pool.items.size(), jobs, [&](std::size_t i) {
    out[i] = {static_cast<int>(i), score(model, pool.items[i].image)};
  });
  return out;
}

// Top-k by score, ties broken by ascending sample index.
inline ImposterSet select_imposters(const std::vector<ScoredSample>& scored, int k,
                                    const std::string& poolId = "") {
  if (k < 0) throw std::domain_error("select_imposters: k must be >= 0");
  ImposterSet result;
  result.poolId = poolId;
  result.k = k;
  result.entries = scored;
  std::sort(result.entries.begin(), result.entries.end(),
            [](const ScoredSample& a, const ScoredSample& b) {
              if (a.score != b.score) return a.score > b.score;
              return a.sampleIndex < b.sampleIndex;
            });
  if (static_cast<std::size_t>(k) < result.entries.size()) {
    result.entries.resize(static_cast<std::size_t>(k));
  } else {
    result.truncated = static_cast<std::size_t>(k) > result.entries.size();
  }
  return result;
}

inline nlohmann::json imposter_set_to_json(const ImposterSet& s) {
  nlohmann::json j;
  j["poolId"] = s.poolId;
  j["k"] = s.k;
  auto& arr = j["entries"] = nlohmann::json::array();
  for (const auto& e : s.entries)
    arr.push_back({{"index", e.sampleIndex}, {"score", e.score}});
  return j;
}

inline ImposterSet imposter_set_from_json(const nlohmann::json& j) {
  ImposterSet s;
  s.poolId = j.at("poolId").get<std::string>();
  s.k = j.at("k").get<int>();
  for (const auto& je : j.at("entries"))
    s.entries.push_back({je.at("index").get<int>(), je.at("score").get<double>()});
  return s;
}

// Materialize the selected pool entries as a new dataset.
inline LabeledDataset materialize_imposters(const LabeledDataset& pool,
                                            const ImposterSet& sel) {
  LabeledDataset out;
  out.name = pool.name + "-imposters";
  out.role = DatasetRole::imposters;
  for (const auto& e : sel.entries) out.items.push_back(pool.items[e.sampleIndex]);
  return out;
}

}  // namespace imposters
