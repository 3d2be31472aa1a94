// Pipeline command line: scene synthesis, discriminator training, imposter
// selection, detector training/adaptation, evaluation, and plots.
//
// Exit codes: 0 success, 2 configuration error, 3 input-hash mismatch,
// 4 numerical failure.
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "imposters/manifest.hpp"
#include "imposters/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace imposters;

namespace {

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config parse error in " + path + ": " + e.what());
  }
  return j;
}

// The recorded content hash of a produced artifact directory.
void write_content_hash(const fs::path& dir, std::uint64_t h) {
  std::ofstream out(dir / "content.hash");
  out << hex64(h) << "\n";
}

std::string read_content_hash(const fs::path& dir) {
  std::ifstream in(dir / "content.hash");
  if (!in)
    throw HashMismatchError("artifact '" + dir.string() + "' has no recorded content hash");
  std::string h;
  in >> h;
  return h;
}

// Verifies a dataset directory against its recorded hash and loads it.
LabeledDataset load_verified_dataset(const fs::path& dir, DatasetRole role,
                                     std::map<std::string, std::string>* hashesOut,
                                     const std::string& artifactName) {
  const std::string recorded = read_content_hash(dir);
  if (!fs::exists(dir / "annotations.jsonl"))
    throw HashMismatchError("artifact '" + artifactName + "' (" + dir.string() +
                            ") is missing its dataset contents");
  check_input_hash(artifactName + " (" + dir.string() + ")", recorded,
                   hash_dataset_dir(dir));
  if (hashesOut) (*hashesOut)[artifactName] = recorded;
  return load_dataset(dir, role);
}

json interval_to_json(const Interval& iv) { return json::array({iv.lo, iv.hi}); }

json detector_config_to_json(const DetectorConfig& c) {
  json j;
  j["inputWidth"] = c.inputWidth;
  j["inputHeight"] = c.inputHeight;
  j["scales"] = c.anchors.scales;
  j["aspectRatios"] = c.anchors.aspectRatios;
  j["featureStride"] = c.anchors.featureStride;
  j["stageChannels"] = c.stageChannels;
  j["headChannels"] = c.headChannels;
  return j;
}

DetectorConfig detector_config_from_json(const json& j) {
  DetectorConfig c;
  c.inputWidth = j.at("inputWidth").get<int>();
  c.inputHeight = j.at("inputHeight").get<int>();
  c.anchors.scales = j.at("scales").get<std::vector<double>>();
  c.anchors.aspectRatios = j.at("aspectRatios").get<std::vector<double>>();
  c.anchors.featureStride = j.at("featureStride").get<int>();
  c.stageChannels = j.at("stageChannels").get<std::vector<int>>();
  c.headChannels = j.at("headChannels").get<int>();
  return c;
}

json disc_config_to_json(const DiscriminatorConfig& c) {
  json j;
  j["width"] = c.width;
  j["height"] = c.height;
  j["channels"] = c.channels;
  return j;
}

DiscriminatorConfig disc_config_from_json(const json& j) {
  DiscriminatorConfig c;
  c.width = j.at("width").get<int>();
  c.height = j.at("height").get<int>();
  c.channels = j.at("channels").get<std::vector<int>>();
  return c;
}

// Experiment profile from the config file; "profile": "ci" switches to the
// small fast preset, individual keys override either base.
ExperimentProfile profile_from_config(const json& cfg) {
  ExperimentProfile p;
  if (cfg.value("profile", "desk") == "ci") p = ExperimentProfile::ci();
  p.renderWidth = cfg.value("renderWidth", p.renderWidth);
  p.renderHeight = cfg.value("renderHeight", p.renderHeight);
  p.sourceCount = cfg.value("sourceCount", p.sourceCount);
  p.targetTrainCount = cfg.value("targetTrainCount", p.targetTrainCount);
  p.targetTestCount = cfg.value("targetTestCount", p.targetTestCount);
  p.poolCount = cfg.value("poolCount", p.poolCount);
  p.discSynthCount = cfg.value("discSynthCount", p.discSynthCount);
  p.imposterK = cfg.value("imposterK", p.imposterK);
  if (cfg.contains("detector")) {
    const json& d = cfg["detector"];
    p.detector.inputWidth = d.value("inputWidth", p.detector.inputWidth);
    p.detector.inputHeight = d.value("inputHeight", p.detector.inputHeight);
    if (d.contains("scales")) p.detector.anchors.scales = d["scales"].get<std::vector<double>>();
    if (d.contains("stageChannels"))
      p.detector.stageChannels = d["stageChannels"].get<std::vector<int>>();
    p.detector.headChannels = d.value("headChannels", p.detector.headChannels);
  }
  if (cfg.contains("disc")) {
    const json& d = cfg["disc"];
    p.disc.width = d.value("width", p.disc.width);
    p.disc.height = d.value("height", p.disc.height);
    if (d.contains("channels")) p.disc.channels = d["channels"].get<std::vector<int>>();
  }
  if (cfg.contains("discOpt")) {
    const json& d = cfg["discOpt"];
    p.discOpt.learningRate = d.value("learningRate", p.discOpt.learningRate);
    p.discOpt.epochs = d.value("epochs", p.discOpt.epochs);
    p.discOpt.batchSize = d.value("batchSize", p.discOpt.batchSize);
  }
  if (cfg.contains("schedule")) {
    const json& s = cfg["schedule"];
    p.schedule.epochsPerStage = s.value("epochsPerStage", p.schedule.epochsPerStage);
    p.schedule.batchSize = s.value("batchSize", p.schedule.batchSize);
    p.schedule.pretrainLr = s.value("pretrainLr", p.schedule.pretrainLr);
    p.schedule.adaptLr = s.value("adaptLr", p.schedule.adaptLr);
    p.schedule.fineTuneLr = s.value("fineTuneLr", p.schedule.fineTuneLr);
    p.schedule.frozenAfterPretrain =
        s.value("frozenAfterPretrain", p.schedule.frozenAfterPretrain);
  }
  return p;
}

RunManifest start_manifest(const std::string& command, const json& cfg,
                           std::uint64_t seed, const fs::path& out) {
  RunManifest m;
  m.command = command;
  m.config = cfg;
  m.seed = seed;
  m.outputDir = out.string();
  return m;
}

int cmd_synth(const json& cfg, std::uint64_t seed, const fs::path& out, int jobs,
              int count, const std::string& domain) {
  if (domain != "source" && domain != "target")
    throw ConfigError("--domain must be source or target");
  if (count < 0) throw ConfigError("--count must be >= 0");
  const ExperimentProfile profile = profile_from_config(cfg);
  RunManifest m = start_manifest("synth", cfg, seed, out);
  write_manifest(m, out);

  const bool target = domain == "target";
  std::vector<SceneParams> scenes;
  const LabeledDataset ds =
      generate_dataset(profile, seed, count, target,
                       target ? DatasetRole::target : DatasetRole::source, &scenes, jobs);
  save_dataset(ds, out, &scenes);
  write_content_hash(out, hash_dataset_dir(out));
  std::cout << "synth: wrote " << count << " " << domain << " images to " << out
            << "\n";
  return 0;
}

int cmd_train_disc(const json& cfg, std::uint64_t seed, const fs::path& out, int jobs) {
  const ExperimentProfile profile = profile_from_config(cfg);
  RunManifest m = start_manifest("train-disc", cfg, seed, out);
  const LabeledDataset real =
      load_verified_dataset(cfg.at("real").get<std::string>(), DatasetRole::target,
                            &m.inputHashes, "real");
  const LabeledDataset synth =
      load_verified_dataset(cfg.at("synth").get<std::string>(), DatasetRole::source,
                            &m.inputHashes, "synth");
  write_manifest(m, out);

  const LabeledDataset realSmall =
      downsample_dataset(real, profile.disc.width, profile.disc.height);
  const LabeledDataset synthSmall =
      downsample_dataset(synth, profile.disc.width, profile.disc.height);
  OptimizerConfig opt = profile.discOpt;
  opt.seed = seed;
  const DiscriminatorModel disc =
      train_discriminator(realSmall, synthSmall, profile.disc, opt, nullptr, nullptr, jobs);

  json extra;
  extra["kind"] = "discriminator";
  extra["disc"] = disc_config_to_json(profile.disc);
  save_checkpoint(disc.params, out / "discriminator.ckpt", extra);
  for (std::size_t e = 0; e < disc.epochSnapshots.size(); ++e) {
    char name[32];
    std::snprintf(name, sizeof(name), "epoch%02d.ckpt", static_cast<int>(e) + 1);
    save_checkpoint(disc.epochSnapshots[e], out / name, extra);
  }
  write_training_log(disc, out / "training_log.csv");
  std::uint64_t h = hash_file(out / "discriminator.ckpt");
  write_content_hash(out, h);
  std::cout << "train-disc: final train accuracy " << disc.log.back().trainAcc << "\n";
  return 0;
}

DiscriminatorModel load_discriminator(const fs::path& dir,
                                      std::map<std::string, std::string>* hashes,
                                      int snapshotEpoch = 0) {
  const std::string recorded = read_content_hash(dir);
  check_input_hash("discriminator (" + dir.string() + ")", recorded,
                   hash_file(dir / "discriminator.ckpt"));
  if (hashes) (*hashes)["discriminator"] = recorded;
  fs::path ckpt = dir / "discriminator.ckpt";
  if (snapshotEpoch > 0) {
    char name[32];
    std::snprintf(name, sizeof(name), "epoch%02d.ckpt", snapshotEpoch);
    ckpt = dir / name;
  }
  json extra;
  ParameterSet params = load_checkpoint(ckpt, &extra);
  DiscriminatorModel model = make_discriminator(disc_config_from_json(extra.at("disc")), 0);
  model.params = std::move(params);
  return model;
}

int cmd_select(const json& cfg, std::uint64_t seed, const fs::path& out, int jobs, int k) {
  RunManifest m = start_manifest("select", cfg, seed, out);
  DiscriminatorModel disc = load_discriminator(cfg.at("discriminator").get<std::string>(),
                                               &m.inputHashes, cfg.value("epoch", 0));
  const fs::path poolDir = cfg.at("pool").get<std::string>();
  const LabeledDataset pool =
      load_verified_dataset(poolDir, DatasetRole::source, &m.inputHashes, "pool");
  write_manifest(m, out);

  const LabeledDataset poolSmall =
      downsample_dataset(pool, disc.config.width, disc.config.height);
  const auto scored = score_pool(disc, poolSmall, jobs);
  const ImposterSet sel = select_imposters(scored, k, poolDir.string());
  {
    std::ofstream js(out / "imposters.json");
    js << imposter_set_to_json(sel).dump(2) << "\n";
  }
  save_dataset(materialize_imposters(pool, sel), out);
  write_content_hash(out, hash_dataset_dir(out));
  double mean = 0;
  for (const auto& e : sel.entries) mean += e.score;
  if (!sel.entries.empty()) mean /= static_cast<double>(sel.entries.size());
  std::cout << "select: kept " << sel.entries.size() << " of " << pool.size()
            << ", mean score " << mean << "\n";
  return 0;
}

void save_detector(const DetectorModel& model, const fs::path& out) {
  json extra;
  extra["kind"] = "detector";
  extra["detector"] = detector_config_to_json(model.config);
  save_checkpoint(model.params, out / "detector.ckpt", extra);
  write_content_hash(out, hash_file(out / "detector.ckpt"));
}

DetectorModel load_detector(const fs::path& dir,
                            std::map<std::string, std::string>* hashes,
                            const std::string& artifactName = "model") {
  const std::string recorded = read_content_hash(dir);
  check_input_hash(artifactName + " (" + dir.string() + ")", recorded,
                   hash_file(dir / "detector.ckpt"));
  if (hashes) (*hashes)[artifactName] = recorded;
  json extra;
  ParameterSet params = load_checkpoint(dir / "detector.ckpt", &extra);
  DetectorModel model = make_detector(detector_config_from_json(extra.at("detector")), 0);
  model.params = std::move(params);
  return model;
}

int cmd_train_detector(const json& cfg, std::uint64_t seed, const fs::path& out,
                       int jobs) {
  const ExperimentProfile profile = profile_from_config(cfg);
  RunManifest m = start_manifest("train-detector", cfg, seed, out);
  const LabeledDataset train =
      load_verified_dataset(cfg.at("train").get<std::string>(), DatasetRole::source,
                            &m.inputHashes, "train");
  DetectorModel model = cfg.contains("init")
                            ? load_detector(cfg.at("init").get<std::string>(),
                                            &m.inputHashes, "init")
                            : make_detector(profile.detector, seed);
  write_manifest(m, out);

  DetectorStageConfig stage;
  stage.learningRate = cfg.value("learningRate", 1e-2);
  stage.epochs = cfg.value("epochs", profile.schedule.epochsPerStage);
  stage.batchSize = cfg.value("batchSize", profile.schedule.batchSize);
  stage.frozenConvLayers = cfg.value("frozenConvLayers", 0);
  stage.seed = mix_seed(seed, 0x57a6e000ull);
  train_detector_stage(model, train, stage, jobs);
  save_detector(model, out);
  std::cout << "train-detector: trained " << stage.epochs << " epochs on "
            << train.size() << " images\n";
  return 0;
}

int cmd_adapt(const json& cfg, std::uint64_t seed, const fs::path& out, int jobs) {
  const ExperimentProfile profile = profile_from_config(cfg);
  RunManifest m = start_manifest("adapt", cfg, seed, out);
  const LabeledDataset source =
      load_verified_dataset(cfg.at("source").get<std::string>(), DatasetRole::source,
                            &m.inputHashes, "source");
  const LabeledDataset target =
      load_verified_dataset(cfg.at("target").get<std::string>(), DatasetRole::target,
                            &m.inputHashes, "target");
  LabeledDataset imposterSet;
  if (cfg.contains("imposters"))
    imposterSet = load_verified_dataset(cfg.at("imposters").get<std::string>(),
                                        DatasetRole::imposters, &m.inputHashes,
                                        "imposters");
  LabeledDataset test;
  if (cfg.contains("test"))
    test = load_verified_dataset(cfg.at("test").get<std::string>(),
                                 DatasetRole::targetTest, &m.inputHashes, "test");
  write_manifest(m, out);

  ScheduleDatasets data;
  data.source = &source;
  data.target = &target;
  if (!imposterSet.items.empty()) data.imposterSet = &imposterSet;

  const std::string which = cfg.value("scheduleName", "all");
  std::vector<SchedulePlan> plans;
  for (const auto& plan : standard_schedules(profile.schedule))
    if (which == "all" || plan.name == which) plans.push_back(plan);
  if (plans.empty()) throw ConfigError("unknown schedule: " + which);

  std::vector<ScheduleResult> results;
  for (const auto& plan : plans) {
    const fs::path dir = out / plan.name;
    const DetectorModel model = run_schedule(plan, data, profile.detector, seed, dir, jobs);
    save_detector(model, dir);
    if (!test.items.empty())
      results.push_back({plan.name, seed,
                         evaluate_miss_rate(model, test, 0.5, 0.1, jobs),
                         evaluate_miss_rate(model, test, 0.7, 0.1, jobs)});
  }
  if (!results.empty()) write_results_csv(results, out / "results.csv");
  std::cout << "adapt: ran " << plans.size() << " schedule(s)\n";
  for (const auto& r : results)
    std::cout << "  " << r.schedule << ": missRate@0.1fppi " << r.missRate50
              << " (0.5 IoU), " << r.missRate70 << " (0.7 IoU)\n";
  return 0;
}

std::vector<EvalImage> detections_for(const json& cfg, const DetectorModel* model,
                                      const LabeledDataset& test, int jobs) {
  std::vector<EvalImage> images(test.items.size());
  if (cfg.value("perfect", false)) {
    for (std::size_t i = 0; i < test.items.size(); ++i) {
      images[i].groundTruths = test.items[i].label.boxes;
      for (const auto& b : test.items[i].label.boxes)
        images[i].detections.push_back({b, 1.0});
    }
    return images;
  }
  if (!model) throw ConfigError("eval needs either a model or perfect=true");
  parallel_for(test.items.size(), jobs, [&](std::size_t i) {
    images[i].groundTruths = test.items[i].label.boxes;
    images[i].detections = detect(*model, test.items[i].image, 0.0);
  });
  return images;
}

void write_detections_jsonl(const std::vector<EvalImage>& images, const fs::path& path) {
  std::ofstream out(path);
  for (std::size_t i = 0; i < images.size(); ++i) {
    json j;
    j["imageId"] = i;
    auto& arr = j["boxes"] = json::array();
    for (const auto& d : images[i].detections)
      arr.push_back({{"x", d.box.x}, {"y", d.box.y}, {"w", d.box.w}, {"h", d.box.h},
                     {"score", d.score}});
    out << j.dump() << "\n";
  }
}

int cmd_eval(const json& cfg, std::uint64_t seed, const fs::path& out, int jobs,
             double fppi) {
  RunManifest m = start_manifest("eval", cfg, seed, out);
  const LabeledDataset test =
      load_verified_dataset(cfg.at("test").get<std::string>(), DatasetRole::targetTest,
                            &m.inputHashes, "test");
  DetectorModel model;
  const bool hasModel = cfg.contains("model");
  if (hasModel)
    model = load_detector(cfg.at("model").get<std::string>(), &m.inputHashes);
  write_manifest(m, out);

  const auto images = detections_for(cfg, hasModel ? &model : nullptr, test, jobs);
  write_detections_jsonl(images, out / "detections.jsonl");

  std::ofstream csv(out / "results.csv");
  csv << "overlap,fppi,miss_rate\n";
  for (double overlap : {0.5, 0.7}) {
    const RocCurve curve = compute_roc(images, overlap);
    const int pct = static_cast<int>(std::lround(overlap * 100));
    write_roc_csv(curve, out / ("roc_" + std::to_string(pct) + ".csv"));
    write_roc_svg(curve, out / ("roc_" + std::to_string(pct) + ".svg"));
    const double mr = miss_rate_at(curve, fppi);
    csv << overlap << "," << fppi << "," << mr << "\n";
    std::cout << "eval: missRate@" << fppi << "fppi = " << mr << " at overlap "
              << overlap << "\n";
  }
  csv.close();
  write_content_hash(out, hash_file(out / "results.csv"));
  return 0;
}

int cmd_stats(const json& cfg, std::uint64_t seed, const fs::path& out) {
  RunManifest m = start_manifest("stats", cfg, seed, out);
  const fs::path dir = cfg.at("dataset").get<std::string>();
  // Stats only needs annotations; verify content hash then read labels.
  const std::string recorded = read_content_hash(dir);
  check_input_hash("dataset (" + dir.string() + ")", recorded, hash_dataset_dir(dir));
  const LabeledDataset ds = load_dataset(dir, DatasetRole::source, /*loadImages=*/false);
  write_manifest(m, out);
  std::vector<GroundTruthLabel> labels;
  for (const auto& ex : ds.items) labels.push_back(ex.label);
  const DatasetStats s = dataset_stats(labels);
  write_stats_csv(s, out / "stats.csv");
  write_stats_svg(s, out / "stats.svg");
  std::cout << "stats: " << labels.size() << " images summarized\n";
  return 0;
}

int cmd_roc(const json& cfg, std::uint64_t seed, const fs::path& out, double overlap,
            double fppi) {
  RunManifest m = start_manifest("roc", cfg, seed, out);
  const LabeledDataset test =
      load_verified_dataset(cfg.at("test").get<std::string>(), DatasetRole::targetTest,
                            &m.inputHashes, "test");
  const fs::path detPath = cfg.at("detections").get<std::string>();
  std::ifstream in(detPath);
  if (!in) throw ConfigError("cannot read detections: " + detPath.string());
  write_manifest(m, out);

  std::vector<EvalImage> images(test.items.size());
  for (std::size_t i = 0; i < images.size(); ++i)
    images[i].groundTruths = test.items[i].label.boxes;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    const std::size_t id = j.at("imageId").get<std::size_t>();
    if (id >= images.size())
      throw ConfigError("detections reference imageId beyond the test set");
    for (const auto& jb : j.at("boxes"))
      images[id].detections.push_back(
          {{jb.at("x").get<double>(), jb.at("y").get<double>(),
            jb.at("w").get<double>(), jb.at("h").get<double>()},
           jb.at("score").get<double>()});
  }
  const RocCurve curve = compute_roc(images, overlap);
  write_roc_csv(curve, out / "roc.csv");
  write_roc_svg(curve, out / "roc.svg");
  std::cout << "roc: missRate@" << fppi << "fppi = " << miss_rate_at(curve, fppi)
            << " at overlap " << overlap << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"adversarial-imposter pipeline"};
  app.require_subcommand(1);

  std::string configPath, domain = "source";
  std::uint64_t seed = 0;
  std::string outDir;
  int jobs = 1, count = 0, k = 0;
  double overlap = 0.5, fppi = 0.1;

  auto add_common = [&](CLI::App* sub, bool needsOut = true) {
    sub->add_option("--config", configPath, "JSON configuration file");
    sub->add_option("--seed", seed, "global random seed");
    auto* o = sub->add_option("--out", outDir, "output directory");
    if (needsOut) o->required();
    sub->add_option("--jobs", jobs, "worker threads for pure stages");
  };

  CLI::App* synth = app.add_subcommand("synth", "render a labeled scene dataset");
  add_common(synth);
  synth->add_option("--count", count, "number of scenes")->required();
  synth->add_option("--domain", domain, "source|target");

  CLI::App* trainDisc =
      app.add_subcommand("train-disc", "train the real-vs-synthetic classifier");
  add_common(trainDisc);

  CLI::App* select = app.add_subcommand("select", "select top-k imposters from a pool");
  add_common(select);
  select->add_option("--k", k, "imposter count")->required();

  CLI::App* trainDet = app.add_subcommand("train-detector", "run one detector stage");
  add_common(trainDet);

  CLI::App* adapt = app.add_subcommand("adapt", "run adaptation schedules");
  add_common(adapt);

  CLI::App* evalCmd = app.add_subcommand("eval", "evaluate a detector on a test set");
  add_common(evalCmd);
  evalCmd->add_option("--fppi", fppi, "summary operating point");

  CLI::App* stats = app.add_subcommand("stats", "dataset label statistics");
  add_common(stats);

  CLI::App* roc = app.add_subcommand("roc", "curve from stored detections");
  add_common(roc);
  roc->add_option("--overlap", overlap, "match IoU threshold")->check(
      CLI::IsMember({0.5, 0.7}));
  roc->add_option("--fppi", fppi, "summary operating point");

  CLI11_PARSE(app, argc, argv);

  try {
    const json cfg = load_config(configPath);
    const fs::path out = outDir;
    if (!out.empty()) fs::create_directories(out);
    if (synth->parsed()) return cmd_synth(cfg, seed, out, jobs, count, domain);
    if (trainDisc->parsed()) return cmd_train_disc(cfg, seed, out, jobs);
    if (select->parsed()) return cmd_select(cfg, seed, out, jobs, k);
    if (trainDet->parsed()) return cmd_train_detector(cfg, seed, out, jobs);
    if (adapt->parsed()) return cmd_adapt(cfg, seed, out, jobs);
    if (evalCmd->parsed()) return cmd_eval(cfg, seed, out, jobs, fppi);
    if (stats->parsed()) return cmd_stats(cfg, seed, out);
    if (roc->parsed()) return cmd_roc(cfg, seed, out, overlap, fppi);
    throw ConfigError("no subcommand");
  } catch (const HashMismatchError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const SamplingError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
