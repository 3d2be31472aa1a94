// Scene parameter space: constraints, rejection sampling, projection and
// the label function that maps scene parameters to bounding boxes.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "imposters/geometry.hpp"
#include "imposters/rng.hpp"
#include "imposters/util.hpp"

namespace imposters {

enum class PersonType { pedestrian, cyclist, motorcyclist };

inline const char* person_type_name(PersonType t) {
  switch (t) {
    case PersonType::pedestrian: return "pedestrian";
    case PersonType::cyclist: return "cyclist";
    default: return "motorcyclist";
  }
}

inline PersonType person_type_from_name(const std::string& s) {
  if (s == "pedestrian") return PersonType::pedestrian;
  if (s == "cyclist") return PersonType::cyclist;
  if (s == "motorcyclist") return PersonType::motorcyclist;
  throw ConfigError("unknown person type: " + s);
}

// Avatar class table: ids [0,14) pedestrians, [14,18) cyclists, rest
// motorcyclists. Physical height and box aspect are deterministic in the id.
inline PersonType avatar_class(int avatarId) {
  if (avatarId < 14) return PersonType::pedestrian;
  if (avatarId < 18) return PersonType::cyclist;
  return PersonType::motorcyclist;
}

inline double avatar_height_m(int avatarId) {
  std::uint64_t s = static_cast<std::uint64_t>(avatarId) * 0x9e3779b97f4a7c15ull + 1;
  const double u = static_cast<double>(splitmix64(s) >> 11) * 0x1.0p-53;
  switch (avatar_class(avatarId)) {
    case PersonType::pedestrian: return 1.5 + 0.4 * u;
    case PersonType::cyclist: return 1.55 + 0.3 * u;
    default: return 1.4 + 0.25 * u;
  }
}

inline double avatar_aspect(int avatarId) {
  std::uint64_t s = static_cast<std::uint64_t>(avatarId) * 0x9e3779b97f4a7c15ull + 2;
  const double u = static_cast<double>(splitmix64(s) >> 11) * 0x1.0p-53;
  switch (avatar_class(avatarId)) {
    case PersonType::pedestrian: return 0.38 + 0.12 * u;
    case PersonType::cyclist: return 0.75 + 0.20 * u;
    default: return 0.85 + 0.25 * u;
  }
}

struct Interval {
  double lo = 0;
  double hi = 0;
  bool contains(double v) const { return v >= lo && v <= hi; }
};

struct SceneConstraints {
  int modelCountMin = 4;
  int modelCountMax = 8;
  int backgroundCount = 1726;
  int avatarCount = 20;
  int animationsPerAvatar = 8;
  Interval animationTime{0.0, 1.0};
  Interval angleX{-90.0, 90.0};
  Interval angleY{-180.0, 180.0};
  Interval angleZ{-90.0, 90.0};
  Interval lightIntensity{0.5, 2.0};
  Interval lightAngleX{-45.0, 45.0};
  Interval lightAngleY{-45.0, 45.0};
  Interval depthRange{4.0, 30.0};
  Interval lateralRange{-12.0, 12.0};  // ground-plane X sampling range, meters
  double maxPairwiseOverlap = 0.20;
  int rejectionBudget = 10000;
};

struct ModelInstance {
  int avatarId = 0;
  int animationId = 0;
  double animationTime = 0;
  double angleX = 0, angleY = 0, angleZ = 0;
  double posX = 0;  // ground-plane meters
  double posZ = 1;  // depth, meters

  bool operator==(const ModelInstance&) const = default;
};

struct SceneParams {
  int backgroundId = 0;
  double lightIntensity = 1.0;
  double lightAngleX = 0, lightAngleY = 0;
  std::vector<ModelInstance> instances;
  std::uint64_t seed = 0;
  bool targetDomain = false;  // set by the narrow-prior sampler
  int attempts = 0;           // rejection-sampling attempts, not serialized

  bool operator==(const SceneParams& o) const {
    return backgroundId == o.backgroundId && lightIntensity == o.lightIntensity &&
           lightAngleX == o.lightAngleX && lightAngleY == o.lightAngleY &&
           instances == o.instances && seed == o.seed;
  }
};

struct GroundTruthLabel {
  std::vector<BBox> boxes;
  std::vector<PersonType> personTypes;  // parallel to boxes
};

// Pinhole projection of a model root position to its image-plane box.
// Box height = f * avatarHeight / Z, foot row = cy + f * cameraHeight / Z,
// horizontal center = cx + f * X / Z, width = aspect(avatarId) * height.
inline BBox project_instance(const CameraModel& camera, const ModelInstance& inst,
                             double avatarHeight) {
  if (inst.posZ <= 0) throw std::domain_error("project_instance: depth must be positive");
  const double h = camera.focalLengthPx * avatarHeight / inst.posZ;
  const double footRow = camera.cy + camera.focalLengthPx * camera.cameraHeight / inst.posZ;
  const double centerCol = camera.cx + camera.focalLengthPx * inst.posX / inst.posZ;
  const double w = avatar_aspect(inst.avatarId) * h;
  return {centerCol - w / 2, footRow - h, w, h};
}

inline BBox project_instance(const CameraModel& camera, const ModelInstance& inst) {
  return project_instance(camera, inst, avatar_height_m(inst.avatarId));
}

// Label function L(z): one box per instance, order preserved.
inline GroundTruthLabel labels_of(const SceneParams& params, const CameraModel& camera) {
  GroundTruthLabel gt;
  gt.boxes.reserve(params.instances.size());
  for (const auto& inst : params.instances) {
    gt.boxes.push_back(project_instance(camera, inst));
    gt.personTypes.push_back(avatar_class(inst.avatarId));
  }
  return gt;
}

enum class ViolationCode {
  instanceCount,
  backgroundRange,
  avatarRange,
  animationRange,
  animationTimeRange,
  angleRange,
  lightIntensityRange,
  lightAngleRange,
  depthRange,
  outOfFrame,
  pairwiseOverlap,
};

struct Violation {
  ViolationCode code;
  int instanceA = -1;  // offending instance (or first of a pair), -1 = scene-level
  int instanceB = -1;
  std::string detail;
};

inline std::vector<Violation> validate_scene(const SceneParams& params,
                                             const CameraModel& camera,
                                             const SceneConstraints& c) {
  std::vector<Violation> out;
  const int n = static_cast<int>(params.instances.size());
  if (n < c.modelCountMin || n > c.modelCountMax)
    out.push_back({ViolationCode::instanceCount, -1, -1,
                   "instance count " + std::to_string(n)});
  if (params.backgroundId < 0 || params.backgroundId >= c.backgroundCount)
    out.push_back({ViolationCode::backgroundRange, -1, -1,
                   "backgroundId " + std::to_string(params.backgroundId)});
  if (!c.lightIntensity.contains(params.lightIntensity))
    out.push_back({ViolationCode::lightIntensityRange, -1, -1,
                   "lightIntensity " + std::to_string(params.lightIntensity)});
  if (!c.lightAngleX.contains(params.lightAngleX) ||
      !c.lightAngleY.contains(params.lightAngleY))
    out.push_back({ViolationCode::lightAngleRange, -1, -1, "light angle"});

  std::vector<std::optional<BBox>> boxes(n);
  for (int i = 0; i < n; ++i) {
    const auto& inst = params.instances[i];
    if (inst.avatarId < 0 || inst.avatarId >= c.avatarCount)
      out.push_back({ViolationCode::avatarRange, i, -1, "avatarId"});
    if (inst.animationId < 0 || inst.animationId >= c.animationsPerAvatar)
      out.push_back({ViolationCode::animationRange, i, -1, "animationId"});
    if (!c.animationTime.contains(inst.animationTime))
      out.push_back({ViolationCode::animationTimeRange, i, -1, "animationTime"});
    if (!c.angleX.contains(inst.angleX) || !c.angleY.contains(inst.angleY) ||
        !c.angleZ.contains(inst.angleZ))
      out.push_back({ViolationCode::angleRange, i, -1, "model angle"});
    if (!c.depthRange.contains(inst.posZ)) {
      out.push_back({ViolationCode::depthRange, i, -1, "posZ"});
      continue;  // projection undefined or misleading outside the range
    }
    const BBox b = project_instance(camera, inst);
    boxes[i] = b;
    if (b.x < 0 || b.y < 0 || b.x2() > camera.imageWidth || b.y2() > camera.imageHeight)
      out.push_back({ViolationCode::outOfFrame, i, -1, "projected box leaves frame"});
  }
  for (int i = 0; i < n; ++i) {
    if (!boxes[i]) continue;
    for (int j = i + 1; j < n; ++j) {
      if (!boxes[j]) continue;
      if (iou(*boxes[i], *boxes[j]) > c.maxPairwiseOverlap)
        out.push_back({ViolationCode::pairwiseOverlap, i, j, "projected IoU too high"});
    }
  }
  return out;
}

struct SamplingError : std::runtime_error {
  std::vector<Violation> lastViolations;
  explicit SamplingError(std::vector<Violation> v)
      : std::runtime_error("rejection budget exceeded"), lastViolations(std::move(v)) {}
};

// One pre-rejection draw from the uniform prior over Table-style ranges.
inline SceneParams draw_scene_uniform(Rng& rng, const SceneConstraints& c) {
  SceneParams p;
  p.backgroundId = static_cast<int>(rng.uniform_int(0, c.backgroundCount));
  p.lightIntensity = rng.uniform(c.lightIntensity.lo, c.lightIntensity.hi);
  p.lightAngleX = rng.uniform(c.lightAngleX.lo, c.lightAngleX.hi);
  p.lightAngleY = rng.uniform(c.lightAngleY.lo, c.lightAngleY.hi);
  const int n = static_cast<int>(rng.uniform_int(c.modelCountMin, c.modelCountMax + 1));
  p.instances.resize(n);
  for (auto& inst : p.instances) {
    inst.avatarId = static_cast<int>(rng.uniform_int(0, c.avatarCount));
    inst.animationId = static_cast<int>(rng.uniform_int(0, c.animationsPerAvatar));
    inst.animationTime = rng.uniform(c.animationTime.lo, c.animationTime.hi);
    inst.angleX = rng.uniform(c.angleX.lo, c.angleX.hi);
    inst.angleY = rng.uniform(c.angleY.lo, c.angleY.hi);
    inst.angleZ = rng.uniform(c.angleZ.lo, c.angleZ.hi);
    inst.posX = rng.uniform(c.lateralRange.lo, c.lateralRange.hi);
    inst.posZ = rng.uniform(c.depthRange.lo, c.depthRange.hi);
  }
  return p;
}

inline SceneParams sample_scene(Rng& rng, const CameraModel& camera,
                                const SceneConstraints& c, std::uint64_t sceneSeed = 0) {
  std::vector<Violation> last;
  for (int attempt = 1; attempt <= c.rejectionBudget; ++attempt) {
    SceneParams p = draw_scene_uniform(rng, c);
    last = validate_scene(p, camera, c);
    if (last.empty()) {
      p.seed = sceneSeed;
      p.attempts = attempt;
      return p;
    }
  }
  throw SamplingError(std::move(last));
}

// Narrow mixture prior standing in for the unknown target-domain distribution:
// clustered depths, dimmer light, crowded scenes, class weights biased away
// from plain pedestrians.
struct TargetPriorConfig {
  struct Cluster {
    double weight = 1.0;
    Interval depth{6.0, 14.0};
    Interval lateral{-5.0, 5.0};
    Interval light{0.5, 0.9};
    Interval animationTime{0.2, 0.8};
    Interval angleY{-60.0, 60.0};
    std::vector<int> avatarIds;    // empty = use classWeights over all avatars
    double cyclistWeight = 0.45;   // remaining mass split pedestrian/motorcyclist
    double motorcyclistWeight = 0.15;
  };
  std::vector<Cluster> clusters = {Cluster{}};
  int countMin = 6;
  int countMax = 8;
};

inline SceneParams sample_target_scene(Rng& rng, const CameraModel& camera,
                                       const SceneConstraints& c,
                                       const TargetPriorConfig& prior,
                                       std::uint64_t sceneSeed = 0) {
  std::vector<Violation> last;
  double totalWeight = 0;
  for (const auto& cl : prior.clusters) totalWeight += cl.weight;
  if (totalWeight <= 0) throw ConfigError("target prior has no clusters");

  auto draw_avatar = [&](const TargetPriorConfig::Cluster& cl) -> int {
    if (!cl.avatarIds.empty())
      return cl.avatarIds[rng.uniform_int(0, static_cast<std::int64_t>(cl.avatarIds.size()))];
    const double u = rng.uniform();
    if (u < cl.cyclistWeight) return static_cast<int>(rng.uniform_int(14, 18));
    if (u < cl.cyclistWeight + cl.motorcyclistWeight)
      return static_cast<int>(rng.uniform_int(18, c.avatarCount));
    return static_cast<int>(rng.uniform_int(0, 14));
  };

  for (int attempt = 1; attempt <= c.rejectionBudget; ++attempt) {
    double pick = rng.uniform() * totalWeight;
    const TargetPriorConfig::Cluster* cl = &prior.clusters.back();
    for (const auto& cand : prior.clusters) {
      if (pick < cand.weight) { cl = &cand; break; }
      pick -= cand.weight;
    }
    SceneParams p;
    p.backgroundId = static_cast<int>(rng.uniform_int(0, c.backgroundCount));
    p.lightIntensity = rng.uniform(cl->light.lo, cl->light.hi);
    p.lightAngleX = rng.uniform(c.lightAngleX.lo, c.lightAngleX.hi);
    p.lightAngleY = rng.uniform(c.lightAngleY.lo, c.lightAngleY.hi);
    const int n = static_cast<int>(rng.uniform_int(prior.countMin, prior.countMax + 1));
    p.instances.resize(n);
    for (auto& inst : p.instances) {
      inst.avatarId = draw_avatar(*cl);
      inst.animationId = static_cast<int>(rng.uniform_int(0, c.animationsPerAvatar));
      inst.animationTime = rng.uniform(cl->animationTime.lo, cl->animationTime.hi);
      inst.angleX = rng.uniform(c.angleX.lo, c.angleX.hi);
      inst.angleY = rng.uniform(cl->angleY.lo, cl->angleY.hi);
      inst.angleZ = rng.uniform(c.angleZ.lo, c.angleZ.hi);
      inst.posX = rng.uniform(cl->lateral.lo, cl->lateral.hi);
      inst.posZ = rng.uniform(cl->depth.lo, cl->depth.hi);
    }
    last = validate_scene(p, camera, c);
    if (last.empty()) {
      p.seed = sceneSeed;
      p.attempts = attempt;
      p.targetDomain = true;
      return p;
    }
  }
  throw SamplingError(std::move(last));
}

// JSON-lines serialization, field names fixed by the file format.
inline nlohmann::json scene_to_json(const SceneParams& p) {
  nlohmann::json j;
  j["backgroundId"] = p.backgroundId;
  j["lightIntensity"] = p.lightIntensity;
  j["lightAngleX"] = p.lightAngleX;
  j["lightAngleY"] = p.lightAngleY;
  j["seed"] = p.seed;
  auto& arr = j["instances"] = nlohmann::json::array();
  for (const auto& inst : p.instances) {
    arr.push_back({{"avatarId", inst.avatarId},
                   {"animationId", inst.animationId},
                   {"animationTime", inst.animationTime},
                   {"angleX", inst.angleX},
                   {"angleY", inst.angleY},
                   {"angleZ", inst.angleZ},
                   {"posX", inst.posX},
                   {"posZ", inst.posZ}});
  }
  return j;
}

inline SceneParams scene_from_json(const nlohmann::json& j) {
  SceneParams p;
  p.backgroundId = j.at("backgroundId").get<int>();
  p.lightIntensity = j.at("lightIntensity").get<double>();
  p.lightAngleX = j.at("lightAngleX").get<double>();
  p.lightAngleY = j.at("lightAngleY").get<double>();
  p.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& ji : j.at("instances")) {
    ModelInstance inst;
    inst.avatarId = ji.at("avatarId").get<int>();
    inst.animationId = ji.at("animationId").get<int>();
    inst.animationTime = ji.at("animationTime").get<double>();
    inst.angleX = ji.at("angleX").get<double>();
    inst.angleY = ji.at("angleY").get<double>();
    inst.angleZ = ji.at("angleZ").get<double>();
    inst.posX = ji.at("posX").get<double>();
    inst.posZ = ji.at("posZ").get<double>();
    p.instances.push_back(inst);
  }
  return p;
}

}  // namespace imposters
