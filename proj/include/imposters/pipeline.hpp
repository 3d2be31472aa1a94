// Three-stage domain adaptation over {S, T, I} plus the toy shifted-domain
// experiment harness used by the schedule-comparison experiments.
#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "imposters/dataset.hpp"
#include "imposters/detector.hpp"
#include "imposters/discriminator.hpp"
#include "imposters/evaluation.hpp"
#include "imposters/imposter.hpp"
#include "imposters/render.hpp"

namespace imposters {

enum class SetExpr { S, T, UnionTI };

struct StageSpec {
  SetExpr trainingSet;
  int epochs;
  double learningRate;
  int frozenLayerCount;
};

struct SchedulePlan {
  std::string name;
  std::vector<StageSpec> stages;
};

struct ScheduleHyper {
  int epochsPerStage = 8;
  double pretrainLr = 1e-2;
  double adaptLr = 1e-3;
  double fineTuneLr = 1e-4;
  int frozenAfterPretrain = 1;  // conv layers frozen in stages after the first
  int batchSize = 8;
  double momentum = 0.9;
};

// The five schedule rows: S; T; S=>T; S=>(T u I); S=>(T u I)=>T.
inline std::vector<SchedulePlan> standard_schedules(const ScheduleHyper& h) {
  const StageSpec preS{SetExpr::S, h.epochsPerStage, h.pretrainLr, 0};
  const StageSpec trainT{SetExpr::T, h.epochsPerStage, h.pretrainLr, 0};
  const StageSpec adaptU{SetExpr::UnionTI, h.epochsPerStage, h.adaptLr, h.frozenAfterPretrain};
  const StageSpec adaptT{SetExpr::T, h.epochsPerStage, h.adaptLr, h.frozenAfterPretrain};
  const StageSpec fineT{SetExpr::T, h.epochsPerStage, h.fineTuneLr, h.frozenAfterPretrain};
  return {
      {"S", {preS}},
      {"T", {trainT}},
      {"S=>T", {preS, adaptT}},
      {"S=>(TuI)", {preS, adaptU}},
      {"S=>(TuI)=>T", {preS, adaptU, fineT}},
  };
}

// Stable seeded concatenation of T and I. Element roles are preserved via
// the datasets' disjoint image paths.
inline LabeledDataset build_union(const LabeledDataset& t, const LabeledDataset& i,
                                  std::uint64_t seed) {
  if (!t.items.empty() && !i.items.empty() &&
      (t.items[0].image.width != i.items[0].image.width ||
       t.items[0].image.height != i.items[0].image.height))
    throw ConfigError("build_union: resolution mismatch between T and I");
  LabeledDataset u;
  u.name = t.name + "+" + i.name;
  u.role = DatasetRole::target;
  u.items = t.items;
  u.items.insert(u.items.end(), i.items.begin(), i.items.end());
  Rng rng(mix_seed(seed, 0x0091ull));
  for (std::size_t j = u.items.size(); j > 1; --j)
    std::swap(u.items[j - 1], u.items[rng.uniform_int(0, static_cast<std::int64_t>(j))]);
  return u;
}

struct ScheduleDatasets {
  const LabeledDataset* source = nullptr;
  const LabeledDataset* target = nullptr;
  const LabeledDataset* imposterSet = nullptr;  // required only for UnionTI
};

// Executes the stages in order, carrying parameters forward. Each stage's
// shuffling stream is seeded by (seed, stage index) alone, so a stage rerun
// from its predecessor checkpoint reproduces its checkpoint bitwise.
inline DetectorModel run_schedule(const SchedulePlan& plan, const ScheduleDatasets& data,
                                  const DetectorConfig& detectorConfig, std::uint64_t seed,
                                  const std::optional<std::filesystem::path>& checkpointDir =
                                      std::nullopt,
                                  int jobs = 1) {
  DetectorModel model = make_detector(detectorConfig, seed);
  if (checkpointDir) std::filesystem::create_directories(*checkpointDir);
  for (std::size_t si = 0; si < plan.stages.size(); ++si) {
    const StageSpec& stage = plan.stages[si];
    const LabeledDataset* ds = nullptr;
    LabeledDataset unionTI;
    switch (stage.trainingSet) {
      case SetExpr::S:
        ds = data.source;
        break;
      case SetExpr::T:
        ds = data.target;
        break;
      case SetExpr::UnionTI:
        if (!data.target || !data.imposterSet)
          throw ConfigError("schedule stage needs both T and I datasets");
        unionTI = build_union(*data.target, *data.imposterSet, mix_seed(seed, si));
        ds = &unionTI;
        break;
    }
    if (!ds) throw ConfigError("schedule stage references a missing dataset role");

    DetectorStageConfig sc;
    sc.learningRate = stage.learningRate;
    sc.epochs = stage.epochs;
    sc.frozenConvLayers = stage.frozenLayerCount;
    sc.seed = mix_seed(seed, 0x57a6e000ull + si);
    if (stage.epochs > 0) train_detector_stage(model, *ds, sc, jobs);
    if (checkpointDir)
      save_checkpoint(model.params,
                      *checkpointDir / ("stage" + std::to_string(si + 1) + ".ckpt"));
  }
  return model;
}

// ---------------------------------------------------------------------------
// Toy shifted-domain experiment harness.
// ---------------------------------------------------------------------------

struct ExperimentProfile {
  CameraModel baseCamera;               // 960x720 reference geometry
  int renderWidth = 960;
  int renderHeight = 720;
  SceneConstraints constraints;
  TargetPriorConfig targetPrior;
  RenderStyle sourceStyle;
  RenderStyle targetStyle{true, 10};

  int sourceCount = 2000;
  int targetTrainCount = 500;
  int targetTestCount = 476;
  int poolCount = 800;
  int discSynthCount = 1000;

  DiscriminatorConfig disc;
  OptimizerConfig discOpt{2e-2, 0.9, 8, 12, 0};

  DetectorConfig detector;
  ScheduleHyper schedule;
  int imposterK = -1;  // -1 = |T|, the default

  CameraModel camera() const { return baseCamera.scaled(renderWidth, renderHeight); }

  // Small profile for fast single-machine experiment runs.
  static ExperimentProfile ci() {
    ExperimentProfile p;
    p.renderWidth = 128;
    p.renderHeight = 96;
    p.sourceCount = 120;
    p.targetTrainCount = 40;
    p.targetTestCount = 60;
    p.poolCount = 240;
    p.discSynthCount = 80;
    p.disc.width = 64;
    p.disc.height = 48;
    p.disc.channels = {6, 12, 24, 24};
    p.detector.inputWidth = 128;
    p.detector.inputHeight = 96;
    p.detector.anchors.scales = {8, 16, 32};
    p.detector.stageChannels = {6, 12, 24};
    p.detector.headChannels = 16;
    return p;
  }
};

// Renders one dataset from the given prior. Scene seeds mix the dataset seed
// with the scene index, so generation parallelizes without shared state.
inline LabeledDataset generate_dataset(const ExperimentProfile& profile, std::uint64_t seed,
                                       int count, bool targetDomain, DatasetRole role,
                                       std::vector<SceneParams>* scenesOut = nullptr,
                                       int jobs = 1) {
  const CameraModel cam = profile.camera();
  LabeledDataset ds;
  ds.role = role;
  ds.name = std::string(role_name(role)) + "-" + std::to_string(seed);
  ds.items.resize(static_cast<std::size_t>(count));
  std::vector<SceneParams> scenes(static_cast<std::size_t>(count));
  parallel_for(static_cast<std::size_t>(count), jobs, [&](std::size_t i) {
    const std::uint64_t sceneSeed = mix_seed(seed, i);
    Rng rng(sceneSeed);
    SceneParams params =
        targetDomain
            ? sample_target_scene(rng, cam, profile.constraints, profile.targetPrior, sceneSeed)
            : sample_scene(rng, cam, profile.constraints, sceneSeed);
    scenes[i] = params;
    ds.items[i].image = render(params, cam,
                               targetDomain ? profile.targetStyle : profile.sourceStyle);
    ds.items[i].label = labels_of(params, cam);
  });
  if (scenesOut) *scenesOut = std::move(scenes);
  return ds;
}

inline LabeledDataset downsample_dataset(const LabeledDataset& ds, int w, int h) {
  LabeledDataset out;
  out.name = ds.name + "-small";
  out.role = ds.role;
  out.items.resize(ds.items.size());
  for (std::size_t i = 0; i < ds.items.size(); ++i) {
    out.items[i].image = downsample_for_discriminator(ds.items[i].image, w, h);
    out.items[i].label = ds.items[i].label;
  }
  return out;
}

// Everything one seed's experiments share: the rendered domains and the
// trained discriminator with its epoch snapshots.
struct ExperimentContext {
  LabeledDataset source, targetTrain, targetTest, pool;
  LabeledDataset discSynth;
  LabeledDataset poolSmall, targetTrainSmall;
  DiscriminatorModel disc;
};

inline ExperimentContext prepare_experiment(const ExperimentProfile& profile,
                                            std::uint64_t seed, int jobs = 1) {
  ExperimentContext ctx;
  ctx.source = generate_dataset(profile, mix_seed(seed, 1), profile.sourceCount, false,
                                DatasetRole::source, nullptr, jobs);
  ctx.targetTrain = generate_dataset(profile, mix_seed(seed, 2), profile.targetTrainCount,
                                     true, DatasetRole::target, nullptr, jobs);
  ctx.targetTest = generate_dataset(profile, mix_seed(seed, 3), profile.targetTestCount,
                                    true, DatasetRole::targetTest, nullptr, jobs);
  ctx.pool = generate_dataset(profile, mix_seed(seed, 4), profile.poolCount, false,
                              DatasetRole::source, nullptr, jobs);
  ctx.discSynth = generate_dataset(profile, mix_seed(seed, 5), profile.discSynthCount,
                                   false, DatasetRole::source, nullptr, jobs);

  ctx.targetTrainSmall =
      downsample_dataset(ctx.targetTrain, profile.disc.width, profile.disc.height);
  ctx.poolSmall = downsample_dataset(ctx.pool, profile.disc.width, profile.disc.height);
  LabeledDataset discSynthSmall =
      downsample_dataset(ctx.discSynth, profile.disc.width, profile.disc.height);

  OptimizerConfig discOpt = profile.discOpt;
  discOpt.seed = mix_seed(seed, 6);
  ctx.disc = train_discriminator(ctx.targetTrainSmall, discSynthSmall, profile.disc,
                                 discOpt, nullptr, nullptr, jobs);
  return ctx;
}

// Select imposters with a given snapshot (epoch index, 1-based; 0 = final).
inline LabeledDataset select_imposter_dataset(const ExperimentContext& ctx, int k,
                                              int snapshotEpoch = 0, int jobs = 1) {
  DiscriminatorModel scorer = ctx.disc;
  if (snapshotEpoch > 0)
    scorer.params = ctx.disc.epochSnapshots.at(static_cast<std::size_t>(snapshotEpoch) - 1);
  const auto scored = score_pool(scorer, ctx.poolSmall, jobs);
  const ImposterSet sel = select_imposters(scored, k, ctx.pool.name);
  return materialize_imposters(ctx.pool, sel);
}

inline double evaluate_miss_rate(const DetectorModel& model, const LabeledDataset& test,
                                 double overlap, double fppi = 0.1, int jobs = 1) {
  std::vector<EvalImage> images(test.items.size());
  parallel_for(test.items.size(), jobs, [&](std::size_t i) {
    images[i].detections = detect(model, test.items[i].image, 0.0);
    images[i].groundTruths = test.items[i].label.boxes;
  });
  return miss_rate_at(compute_roc(images, overlap), fppi);
}

struct ScheduleResult {
  std::string schedule;
  std::uint64_t seed;
  double missRate50;
  double missRate70;
};

// Runs the five schedule rows for one seed, sharing stage prefixes (the
// stage RNGs depend only on (seed, stage index), so a shared prefix is
// bitwise identical to rerunning it).
inline std::vector<ScheduleResult> run_schedule_rows(const ExperimentContext& ctx,
                                                     const ExperimentProfile& profile,
                                                     std::uint64_t seed, int jobs = 1) {
  const int k = profile.imposterK >= 0 ? profile.imposterK
                                       : static_cast<int>(ctx.targetTrain.size());
  const LabeledDataset imposterSet = select_imposter_dataset(ctx, k, 0, jobs);
  const ScheduleHyper& h = profile.schedule;

  auto stage = [&](DetectorModel& m, SetExpr expr, double lr, int frozen, std::size_t si) {
    const LabeledDataset* ds = nullptr;
    LabeledDataset u;
    if (expr == SetExpr::S) ds = &ctx.source;
    if (expr == SetExpr::T) ds = &ctx.targetTrain;
    if (expr == SetExpr::UnionTI) {
      u = build_union(ctx.targetTrain, imposterSet, mix_seed(seed, si));
      ds = &u;
    }
    DetectorStageConfig sc;
    sc.learningRate = lr;
    sc.epochs = h.epochsPerStage;
    sc.batchSize = h.batchSize;
    sc.momentum = h.momentum;
    sc.frozenConvLayers = frozen;
    sc.seed = mix_seed(seed, 0x57a6e000ull + si);
    train_detector_stage(m, *ds, sc, jobs);
  };
  auto eval = [&](const std::string& name, const DetectorModel& m) {
    return ScheduleResult{name, seed,
                          evaluate_miss_rate(m, ctx.targetTest, 0.5, 0.1, jobs),
                          evaluate_miss_rate(m, ctx.targetTest, 0.7, 0.1, jobs)};
  };

  std::vector<ScheduleResult> results;

  DetectorModel pretrained = make_detector(profile.detector, seed);
  stage(pretrained, SetExpr::S, h.pretrainLr, 0, 0);
  results.push_back(eval("S", pretrained));

  DetectorModel targetOnly = make_detector(profile.detector, seed);
  stage(targetOnly, SetExpr::T, h.pretrainLr, 0, 0);
  results.push_back(eval("T", targetOnly));

  DetectorModel st = pretrained;
  stage(st, SetExpr::T, h.adaptLr, h.frozenAfterPretrain, 1);
  results.push_back(eval("S=>T", st));

  DetectorModel su = pretrained;
  stage(su, SetExpr::UnionTI, h.adaptLr, h.frozenAfterPretrain, 1);
  results.push_back(eval("S=>(TuI)", su));

  DetectorModel full = su;
  stage(full, SetExpr::T, h.fineTuneLr, h.frozenAfterPretrain, 2);
  results.push_back(eval("S=>(TuI)=>T", full));

  return results;
}

inline void write_results_csv(const std::vector<ScheduleResult>& rows,
                              const std::filesystem::path& path) {
  std::ofstream out(path);
  out << "schedule,seed,missRate50,missRate70\n";
  for (const auto& r : rows)
    out << r.schedule << "," << r.seed << "," << r.missRate50 << "," << r.missRate70
        << "\n";
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw std::domain_error("median of empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace imposters
