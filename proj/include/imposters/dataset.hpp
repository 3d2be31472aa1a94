// Labeled dataset container and on-disk layout:
//   <dir>/images/NNNNNN.ppm, <dir>/annotations.jsonl, optional scenes.jsonl,
//   <dir>/manifest.json (written by the producing command).
#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "imposters/image.hpp"
#include "imposters/scene.hpp"
#include "imposters/util.hpp"

namespace imposters {

enum class DatasetRole { source, target, imposters, targetTest };

inline const char* role_name(DatasetRole r) {
  switch (r) {
    case DatasetRole::source: return "source";
    case DatasetRole::target: return "target";
    case DatasetRole::imposters: return "imposters";
    default: return "targetTest";
  }
}

struct LabeledExample {
  std::string imagePath;
  GroundTruthLabel label;
  ImageBuffer image;  // loaded eagerly at desk scale
};

struct LabeledDataset {
  std::string name;
  DatasetRole role = DatasetRole::source;
  std::vector<LabeledExample> items;

  std::size_t size() const { return items.size(); }
};

inline nlohmann::json label_to_json(const GroundTruthLabel& gt, int imageId = -1) {
  nlohmann::json j;
  if (imageId >= 0) j["imageId"] = imageId;
  auto& arr = j["boxes"] = nlohmann::json::array();
  for (std::size_t i = 0; i < gt.boxes.size(); ++i) {
    arr.push_back({{"x", gt.boxes[i].x},
                   {"y", gt.boxes[i].y},
                   {"w", gt.boxes[i].w},
                   {"h", gt.boxes[i].h},
                   {"personType", person_type_name(gt.personTypes[i])}});
  }
  return j;
}

inline GroundTruthLabel label_from_json(const nlohmann::json& j) {
  GroundTruthLabel gt;
  for (const auto& jb : j.at("boxes")) {
    gt.boxes.push_back({jb.at("x").get<double>(), jb.at("y").get<double>(),
                        jb.at("w").get<double>(), jb.at("h").get<double>()});
    gt.personTypes.push_back(person_type_from_name(jb.at("personType").get<std::string>()));
  }
  return gt;
}

inline std::string image_file_name(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06d.ppm", index);
  return buf;
}

inline void save_dataset(const LabeledDataset& ds, const std::filesystem::path& dir,
                         const std::vector<SceneParams>* scenes = nullptr) {
  std::filesystem::create_directories(dir / "images");
  std::ofstream ann(dir / "annotations.jsonl");
  if (!ann) throw ConfigError("cannot write annotations: " + (dir / "annotations.jsonl").string());
  for (std::size_t i = 0; i < ds.items.size(); ++i) {
    write_ppm(ds.items[i].image, dir / "images" / image_file_name(static_cast<int>(i)));
    ann << label_to_json(ds.items[i].label, static_cast<int>(i)).dump() << "\n";
  }
  if (scenes) {
    std::ofstream sc(dir / "scenes.jsonl");
    for (const auto& s : *scenes) sc << scene_to_json(s).dump() << "\n";
  }
}

inline LabeledDataset load_dataset(const std::filesystem::path& dir, DatasetRole role,
                                   bool loadImages = true) {
  LabeledDataset ds;
  ds.name = dir.filename().string();
  ds.role = role;
  std::ifstream ann(dir / "annotations.jsonl");
  if (!ann) throw ConfigError("cannot read annotations: " + (dir / "annotations.jsonl").string());
  std::string line;
  int index = 0;
  while (std::getline(ann, line)) {
    if (line.empty()) continue;
    LabeledExample ex;
    ex.label = label_from_json(nlohmann::json::parse(line));
    ex.imagePath = (dir / "images" / image_file_name(index)).string();
    if (loadImages) ex.image = read_ppm(ex.imagePath);
    ds.items.push_back(std::move(ex));
    ++index;
  }
  return ds;
}

// Content hash over annotations and image bytes, used by manifests.
inline std::uint64_t hash_dataset_dir(const std::filesystem::path& dir) {
  std::uint64_t h = hash_file(dir / "annotations.jsonl");
  for (int i = 0;; ++i) {
    const auto p = dir / "images" / image_file_name(i);
    if (!std::filesystem::exists(p)) break;
    const std::uint64_t fh = hash_file(p);
    h = fnv1a64(&fh, sizeof(fh), h);
  }
  return h;
}

}  // namespace imposters
