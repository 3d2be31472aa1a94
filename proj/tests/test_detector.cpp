#include <catch2/catch_amalgamated.hpp>

#include "imposters/detector.hpp"

using namespace imposters;

namespace {

DetectorConfig tiny_config() {
  DetectorConfig cfg;
  cfg.inputWidth = 32;
  cfg.inputHeight = 32;
  cfg.stageChannels = {4, 6, 8};
  cfg.headChannels = 8;
  return cfg;
}

Tensor random_map(const std::vector<int>& shape, Rng& rng) {
  Tensor t(shape);
  for (auto& v : t.data) v = rng.uniform(-1, 1);
  return t;
}

}  // namespace

TEST_CASE("anchor count is cells times anchors per cell") {
  const AnchorSpec spec;
  const auto anchors = generate_anchors(192, 144, spec);
  REQUIRE(anchors.size() == static_cast<std::size_t>(192 / 8) * (144 / 8) * 9);
}

TEST_CASE("anchor sizes come from scale and ratio") {
  AnchorSpec spec;
  spec.scales = {32};
  spec.aspectRatios = {0.5};
  spec.featureStride = 16;
  const auto anchors = generate_anchors(32, 32, spec);
  REQUIRE(anchors.size() == 4);
  // First cell center (8, 8): height 32, width 16 -> (0, -8, 16, 32).
  REQUIRE(anchors[0] == BBox{0, -8, 16, 32});
  // Row-major cells: second anchor centered at (24, 8).
  REQUIRE(anchors[1] == BBox{16, -8, 16, 32});
}

TEST_CASE("anchors are scale-major within a cell") {
  AnchorSpec spec;
  spec.scales = {16, 32};
  spec.aspectRatios = {0.5, 1.0};
  spec.featureStride = 8;
  const auto anchors = generate_anchors(8, 8, spec);
  REQUIRE(anchors.size() == 4);
  REQUIRE(anchors[0].h == 16);
  REQUIRE(anchors[0].w == 8);
  REQUIRE(anchors[1].h == 16);
  REQUIRE(anchors[1].w == 16);
  REQUIRE(anchors[2].h == 32);
}

TEST_CASE("indivisible image size is rejected") {
  AnchorSpec spec;
  REQUIRE_THROWS_AS(generate_anchors(100, 144, spec), ShapeError);
  REQUIRE_THROWS_AS(generate_anchors(240, 180, spec), ShapeError);
}

TEST_CASE("assignment thresholds: positive above 0.5, negative below 0.2") {
  // Anchor (0,0,10,10); gt chosen to hit each band.
  const std::vector<BBox> anchors = {{0, 0, 10, 10}, {100, 100, 10, 10}};
  GroundTruthLabel gt;
  gt.boxes = {{0, 0, 10, 14}};  // IoU 10/14 with anchor 0
  gt.personTypes = {PersonType::pedestrian};
  const AnchorAssignment a = assign_anchors(anchors, gt);
  REQUIRE(a.labels[0] == AnchorLabel::positive);
  REQUIRE(a.matchedGt[0] == 0);
  REQUIRE(a.labels[1] == AnchorLabel::negative);
  REQUIRE(a.matchedGt[1] == -1);
}

TEST_CASE("mid-band overlap is ignored unless forced") {
  const std::vector<BBox> anchors = {{0, 0, 10, 10}, {0, 0, 10, 10}, {20, 2, 10, 10}};
  GroundTruthLabel gt;
  gt.boxes = {{0, 0, 10, 30}};  // IoU(anchor0) = 100/300 = 1/3: in the ignore band
  gt.personTypes = {PersonType::pedestrian};
  const AnchorAssignment a = assign_anchors(anchors, gt);
  // Anchor 0 is forced positive as the (first) best match for this gt.
  REQUIRE(a.labels[0] == AnchorLabel::positive);
  // Anchor 1, an equal but later match, stays in the ignore band.
  REQUIRE(a.labels[1] == AnchorLabel::ignore);
  // Anchor 2 is disjoint: plain negative.
  REQUIRE(a.labels[2] == AnchorLabel::negative);
}

TEST_CASE("every ground truth gets at least one positive anchor") {
  Rng rng(61);
  const auto anchors = generate_anchors(64, 64, AnchorSpec{{16, 32}, {0.5, 1.0}, 8});
  for (int trial = 0; trial < 30; ++trial) {
    GroundTruthLabel gt;
    const int ng = static_cast<int>(rng.uniform_int(1, 5));
    for (int j = 0; j < ng; ++j) {
      gt.boxes.push_back({rng.uniform(0, 40), rng.uniform(0, 40), rng.uniform(4, 24),
                          rng.uniform(4, 24)});
      gt.personTypes.push_back(PersonType::pedestrian);
    }
    const AnchorAssignment a = assign_anchors(anchors, gt);
    std::vector<bool> covered(ng, false);
    for (std::size_t i = 0; i < anchors.size(); ++i)
      if (a.labels[i] == AnchorLabel::positive) covered[a.matchedGt[i]] = true;
    for (bool c : covered) REQUIRE(c);
  }
}

TEST_CASE("assignment agrees with a brute-force oracle") {
  Rng rng(62);
  const auto anchors = generate_anchors(32, 32, AnchorSpec{{12, 20}, {0.5, 1.0}, 8});
  for (int trial = 0; trial < 20; ++trial) {
    GroundTruthLabel gt;
    const int ng = static_cast<int>(rng.uniform_int(1, 4));
    for (int j = 0; j < ng; ++j) {
      gt.boxes.push_back({rng.uniform(0, 20), rng.uniform(0, 20), rng.uniform(4, 16),
                          rng.uniform(4, 16)});
      gt.personTypes.push_back(PersonType::pedestrian);
    }
    const AnchorAssignment got = assign_anchors(anchors, gt);

    // Oracle: per-anchor max IoU decides the band, then force the argmax
    // anchor of each gt positive.
    std::vector<AnchorLabel> want(anchors.size(), AnchorLabel::negative);
    for (std::size_t i = 0; i < anchors.size(); ++i) {
      double best = 0;
      for (const auto& g : gt.boxes) best = std::max(best, iou(anchors[i], g));
      if (best > 0.5)
        want[i] = AnchorLabel::positive;
      else if (best >= 0.2)
        want[i] = AnchorLabel::ignore;
    }
    for (const auto& g : gt.boxes) {
      std::size_t argmax = 0;
      double best = -1;
      for (std::size_t i = 0; i < anchors.size(); ++i) {
        const double v = iou(anchors[i], g);
        if (v > best) {
          best = v;
          argmax = i;
        }
      }
      want[argmax] = AnchorLabel::positive;
    }
    for (std::size_t i = 0; i < anchors.size(); ++i) REQUIRE(got.labels[i] == want[i]);
  }
}

TEST_CASE("encode_box hand example") {
  const BBox anchor{0, 0, 16, 32};
  const BBox gt{4, 0, 16, 64};  // centers differ by (4, 16); w equal, h doubled
  const BoxDeltas d = encode_box(anchor, gt);
  REQUIRE_THAT(d.dx, Catch::Matchers::WithinAbs(0.25, 1e-12));
  REQUIRE_THAT(d.dy, Catch::Matchers::WithinAbs(0.5, 1e-12));
  REQUIRE_THAT(d.dw, Catch::Matchers::WithinAbs(0.0, 1e-12));
  REQUIRE_THAT(d.dh, Catch::Matchers::WithinAbs(std::log(2.0), 1e-12));
}

TEST_CASE("zero deltas decode to the anchor itself") {
  const BBox anchor{3, 5, 12, 24};
  const BBox out = decode_box(anchor, {0, 0, 0, 0});
  REQUIRE_THAT(out.x, Catch::Matchers::WithinAbs(anchor.x, 1e-12));
  REQUIRE_THAT(out.h, Catch::Matchers::WithinAbs(anchor.h, 1e-12));
}

TEST_CASE("encode/decode round-trips below 1e-9") {
  Rng rng(63);
  for (int i = 0; i < 500; ++i) {
    const BBox anchor{rng.uniform(0, 100), rng.uniform(0, 100), rng.uniform(1, 50),
                      rng.uniform(1, 50)};
    const BBox gt{rng.uniform(0, 100), rng.uniform(0, 100), rng.uniform(1, 50),
                  rng.uniform(1, 50)};
    const BBox back = decode_box(anchor, encode_box(anchor, gt));
    REQUIRE_THAT(back.x, Catch::Matchers::WithinAbs(gt.x, 1e-9));
    REQUIRE_THAT(back.y, Catch::Matchers::WithinAbs(gt.y, 1e-9));
    REQUIRE_THAT(back.w, Catch::Matchers::WithinAbs(gt.w, 1e-9));
    REQUIRE_THAT(back.h, Catch::Matchers::WithinAbs(gt.h, 1e-9));
  }
}

TEST_CASE("encode rejects degenerate boxes") {
  REQUIRE_THROWS_AS(encode_box({0, 0, 0, 10}, {0, 0, 5, 5}), std::domain_error);
  REQUIRE_THROWS_AS(encode_box({0, 0, 5, 5}, {0, 0, 5, 0}), std::domain_error);
}

TEST_CASE("nms drops exact duplicates") {
  std::vector<Detection> dets = {{{0, 0, 10, 10}, 0.9}, {{0, 0, 10, 10}, 0.8},
                                 {{50, 50, 10, 10}, 0.7}};
  const auto kept = nms(dets, 0.5);
  REQUIRE(kept.size() == 2);
  REQUIRE(kept[0].score == 0.9);
  REQUIRE(kept[1].score == 0.7);
}

TEST_CASE("nms output satisfies the greedy characterization") {
  Rng rng(64);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<Detection> dets;
    const int n = static_cast<int>(rng.uniform_int(1, 25));
    for (int i = 0; i < n; ++i)
      dets.push_back({{rng.uniform(0, 40), rng.uniform(0, 40), rng.uniform(4, 20),
                       rng.uniform(4, 20)},
                      rng.uniform()});
    const double th = 0.3;
    const auto kept = nms(dets, th);
    // Kept boxes are pairwise below the threshold.
    for (std::size_t i = 0; i < kept.size(); ++i)
      for (std::size_t j = i + 1; j < kept.size(); ++j)
        REQUIRE(iou(kept[i].box, kept[j].box) <= th);
    // Every dropped detection overlaps a kept one of no lower score.
    for (const auto& d : dets) {
      bool isKept = false;
      for (const auto& k : kept)
        if (k.box == d.box && k.score == d.score) isKept = true;
      if (isKept) continue;
      bool explained = false;
      for (const auto& k : kept)
        if (k.score >= d.score && iou(k.box, d.box) > th) explained = true;
      REQUIRE(explained);
    }
  }
}

TEST_CASE("detector head shapes match the anchor grid") {
  const DetectorConfig cfg = tiny_config();
  DetectorModel m = make_detector(cfg, 5);
  const AnchorIndexer ix(cfg);
  REQUIRE(ix.cellsX == 4);
  REQUIRE(ix.cellsY == 4);
  REQUIRE(m.anchorGrid.size() == static_cast<std::size_t>(16 * 9));
  ImageBuffer img(cfg.inputWidth, cfg.inputHeight);
  Workspace ws = forward(m.graph, m.params, {{"image", image_to_tensor(img)}});
  REQUIRE(ws.act[m.scoreNode].shape == std::vector<int>{9, 4, 4});
  REQUIRE(ws.act[m.regNode].shape == std::vector<int>{36, 4, 4});
}

TEST_CASE("detector rejects a bad stage count") {
  DetectorConfig cfg = tiny_config();
  cfg.stageChannels = {4, 6};
  REQUIRE_THROWS_AS(make_detector(cfg, 1), ConfigError);
}

TEST_CASE("zero logits give classification loss ln 2") {
  const DetectorConfig cfg = tiny_config();
  const AnchorIndexer ix(cfg);
  const auto anchors = generate_anchors(cfg.inputWidth, cfg.inputHeight, cfg.anchors);
  GroundTruthLabel gt;
  gt.boxes = {{8, 4, 12, 24}};
  gt.personTypes = {PersonType::pedestrian};
  const AnchorAssignment assign = assign_anchors(anchors, gt);
  const Tensor scoreMap({9, ix.cellsY, ix.cellsX});
  const Tensor regMap({36, ix.cellsY, ix.cellsX});
  const DetectorLoss loss = detector_loss(scoreMap, regMap, assign, anchors, gt, ix);
  REQUIRE_THAT(loss.classification, Catch::Matchers::WithinAbs(std::log(2.0), 1e-12));
}

TEST_CASE("saturated correct logits give near-zero classification loss") {
  const DetectorConfig cfg = tiny_config();
  const AnchorIndexer ix(cfg);
  const auto anchors = generate_anchors(cfg.inputWidth, cfg.inputHeight, cfg.anchors);
  GroundTruthLabel gt;
  gt.boxes = {{8, 4, 12, 24}};
  gt.personTypes = {PersonType::pedestrian};
  const AnchorAssignment assign = assign_anchors(anchors, gt);
  Tensor scoreMap({9, ix.cellsY, ix.cellsX});
  Tensor regMap({36, ix.cellsY, ix.cellsX});
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    if (assign.labels[i] == AnchorLabel::ignore) continue;
    scoreMap.data[ix.score_offset(i)] =
        assign.labels[i] == AnchorLabel::positive ? 20.0 : -20.0;
    if (assign.labels[i] == AnchorLabel::positive) {
      const BoxDeltas t = encode_box(anchors[i], gt.boxes[assign.matchedGt[i]]);
      regMap.data[ix.reg_offset(i, 0)] = t.dx;
      regMap.data[ix.reg_offset(i, 1)] = t.dy;
      regMap.data[ix.reg_offset(i, 2)] = t.dw;
      regMap.data[ix.reg_offset(i, 3)] = t.dh;
    }
  }
  const DetectorLoss loss = detector_loss(scoreMap, regMap, assign, anchors, gt, ix);
  REQUIRE(loss.classification < 1e-8);
  REQUIRE(loss.regression == 0.0);
  REQUIRE(loss.total < 1e-8);
}

TEST_CASE("unit regression residual contributes 0.5 per positive anchor") {
  const DetectorConfig cfg = tiny_config();
  const AnchorIndexer ix(cfg);
  const auto anchors = generate_anchors(cfg.inputWidth, cfg.inputHeight, cfg.anchors);
  GroundTruthLabel gt;
  gt.boxes = {{8, 4, 12, 24}};
  gt.personTypes = {PersonType::pedestrian};
  const AnchorAssignment assign = assign_anchors(anchors, gt);
  Tensor scoreMap({9, ix.cellsY, ix.cellsX});
  Tensor regMap({36, ix.cellsY, ix.cellsX});
  std::size_t nPos = 0;
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    if (assign.labels[i] != AnchorLabel::positive) continue;
    ++nPos;
    const BoxDeltas t = encode_box(anchors[i], gt.boxes[assign.matchedGt[i]]);
    regMap.data[ix.reg_offset(i, 0)] = t.dx + 1.0;  // unit residual in dx only
    regMap.data[ix.reg_offset(i, 1)] = t.dy;
    regMap.data[ix.reg_offset(i, 2)] = t.dw;
    regMap.data[ix.reg_offset(i, 3)] = t.dh;
  }
  REQUIRE(nPos >= 1);
  const DetectorLoss loss = detector_loss(scoreMap, regMap, assign, anchors, gt, ix);
  // Sum of 0.5 per positive anchor, divided by the positive count.
  REQUIRE_THAT(loss.regression, Catch::Matchers::WithinAbs(0.5, 1e-12));
  REQUIRE_THAT(loss.total, Catch::Matchers::WithinAbs(loss.classification + 0.5, 1e-12));
}

TEST_CASE("detector loss gradients match finite differences") {
  const DetectorConfig cfg = tiny_config();
  const AnchorIndexer ix(cfg);
  const auto anchors = generate_anchors(cfg.inputWidth, cfg.inputHeight, cfg.anchors);
  GroundTruthLabel gt;
  gt.boxes = {{6, 2, 14, 26}, {18, 10, 8, 18}};
  gt.personTypes = {PersonType::pedestrian, PersonType::cyclist};
  const AnchorAssignment assign = assign_anchors(anchors, gt);
  Rng rng(65);
  Tensor scoreMap = random_map({9, ix.cellsY, ix.cellsX}, rng);
  Tensor regMap = random_map({36, ix.cellsY, ix.cellsX}, rng);
  const DetectorLoss loss = detector_loss(scoreMap, regMap, assign, anchors, gt, ix);
  const double eps = 1e-6;
  auto check = [&](Tensor& map, const Tensor& grad) {
    Rng pick(66);
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t i = pick.uniform_int(0, static_cast<std::int64_t>(map.data.size()));
      const double orig = map.data[i];
      map.data[i] = orig + eps;
      const double lp = detector_loss(scoreMap, regMap, assign, anchors, gt, ix).total;
      map.data[i] = orig - eps;
      const double lm = detector_loss(scoreMap, regMap, assign, anchors, gt, ix).total;
      map.data[i] = orig;
      const double numeric = (lp - lm) / (2 * eps);
      REQUIRE_THAT(grad.data[i], Catch::Matchers::WithinAbs(numeric, 1e-5));
    }
  };
  check(scoreMap, loss.scoreGrad);
  check(regMap, loss.regGrad);
}

TEST_CASE("loss with no usable anchors throws") {
  const DetectorConfig cfg = tiny_config();
  const AnchorIndexer ix(cfg);
  const auto anchors = generate_anchors(cfg.inputWidth, cfg.inputHeight, cfg.anchors);
  AnchorAssignment assign;
  assign.labels.assign(anchors.size(), AnchorLabel::ignore);
  assign.matchedGt.assign(anchors.size(), -1);
  const Tensor scoreMap({9, ix.cellsY, ix.cellsX});
  const Tensor regMap({36, ix.cellsY, ix.cellsX});
  REQUIRE_THROWS_AS(detector_loss(scoreMap, regMap, assign, anchors,
                                  GroundTruthLabel{}, ix),
                    std::domain_error);
}

TEST_CASE("set_frozen_conv_layers freezes exactly the named prefixes") {
  DetectorModel m = make_detector(tiny_config(), 1);
  set_frozen_conv_layers(m, 2);
  REQUIRE(m.params.frozen.at("conv1.w"));
  REQUIRE(m.params.frozen.at("conv1.b"));
  REQUIRE(m.params.frozen.at("conv2.w"));
  REQUIRE_FALSE(m.params.frozen.at("conv3.w"));
  REQUIRE_FALSE(m.params.frozen.at("head.w"));
  REQUIRE_FALSE(m.params.frozen.at("score.w"));
  set_frozen_conv_layers(m, 0);
  REQUIRE_FALSE(m.params.frozen.at("conv1.w"));
}

namespace {

LabeledDataset tiny_detection_set(const DetectorConfig& cfg, int n, std::uint64_t seed) {
  LabeledDataset ds;
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    LabeledExample ex;
    ex.image = ImageBuffer(cfg.inputWidth, cfg.inputHeight);
    const BBox box{rng.uniform(2, 14), rng.uniform(2, 8), 10, 20};
    for (int y = 0; y < cfg.inputHeight; ++y)
      for (int x = 0; x < cfg.inputWidth; ++x) {
        auto* p = ex.image.at(x, y);
        const bool inside = x >= box.x && x < box.x2() && y >= box.y && y < box.y2();
        p[0] = inside ? 220 : 30;
        p[1] = inside ? 60 : 30;
        p[2] = inside ? 60 : 40;
      }
    ex.label.boxes = {box};
    ex.label.personTypes = {PersonType::pedestrian};
    ds.items.push_back(std::move(ex));
  }
  return ds;
}

double mean_total_loss(const DetectorModel& m, const LabeledDataset& data) {
  const AnchorIndexer ix(m.config);
  double sum = 0;
  for (const auto& ex : data.items) {
    Workspace ws = forward(m.graph, m.params, {{"image", image_to_tensor(ex.image)}});
    const AnchorAssignment assign = assign_anchors(m.anchorGrid, ex.label);
    sum += detector_loss(ws.act[m.scoreNode], ws.act[m.regNode], assign, m.anchorGrid,
                         ex.label, ix)
               .total;
  }
  return sum / static_cast<double>(data.items.size());
}

}  // namespace

TEST_CASE("one training stage reduces the loss and is deterministic") {
  const DetectorConfig cfg = tiny_config();
  const LabeledDataset data = tiny_detection_set(cfg, 8, 71);
  DetectorModel m = make_detector(cfg, 7);
  const double before = mean_total_loss(m, data);
  DetectorStageConfig stage;
  stage.learningRate = 5e-3;
  stage.epochs = 4;
  stage.batchSize = 4;
  stage.seed = 3;
  train_detector_stage(m, data, stage);
  REQUIRE(mean_total_loss(m, data) < before);

  DetectorModel m2 = make_detector(cfg, 7);
  train_detector_stage(m2, data, stage);
  REQUIRE(m.params == m2.params);
  DetectorModel m3 = make_detector(cfg, 7);
  train_detector_stage(m3, data, stage, /*jobs=*/3);
  REQUIRE(m.params == m3.params);
}

TEST_CASE("frozen backbone layers survive training bitwise") {
  const DetectorConfig cfg = tiny_config();
  const LabeledDataset data = tiny_detection_set(cfg, 4, 72);
  DetectorModel m = make_detector(cfg, 9);
  const Tensor conv1Before = m.params.values.at("conv1.w");
  const Tensor conv2Before = m.params.values.at("conv2.w");
  DetectorStageConfig stage;
  stage.epochs = 2;
  stage.batchSize = 4;
  stage.frozenConvLayers = 1;
  train_detector_stage(m, data, stage);
  REQUIRE(m.params.values.at("conv1.w") == conv1Before);
  REQUIRE(!(m.params.values.at("conv2.w") == conv2Before));
}

TEST_CASE("detect rejects mismatched input resolution") {
  DetectorModel m = make_detector(tiny_config(), 1);
  REQUIRE_THROWS_AS(detect(m, ImageBuffer(16, 16), 0.5), ShapeError);
}

TEST_CASE("detect output respects the score threshold and NMS") {
  const DetectorConfig cfg = tiny_config();
  const LabeledDataset data = tiny_detection_set(cfg, 8, 73);
  DetectorModel m = make_detector(cfg, 11);
  DetectorStageConfig stage;
  stage.learningRate = 5e-3;
  stage.epochs = 8;
  stage.batchSize = 4;
  train_detector_stage(m, data, stage);
  const auto dets = detect(m, data.items[0].image, 0.05, 0.5);
  for (const auto& d : dets) {
    // Scores are logits; the threshold applies to their sigmoid.
    REQUIRE(1.0 / (1.0 + std::exp(-d.score)) >= 0.05);
    REQUIRE(d.box.x >= 0);
    REQUIRE(d.box.y >= 0);
    REQUIRE(d.box.x2() <= cfg.inputWidth);
    REQUIRE(d.box.y2() <= cfg.inputHeight);
  }
  for (std::size_t i = 0; i < dets.size(); ++i)
    for (std::size_t j = i + 1; j < dets.size(); ++j)
      REQUIRE(iou(dets[i].box, dets[j].box) <= 0.5);
}
