// Dense anchor-based detector: anchor grid, IoU assignment, box regression
// coding, training loss, and NMS inference.
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "imposters/dataset.hpp"
#include "imposters/discriminator.hpp"  // image_to_tensor
#include "imposters/geometry.hpp"
#include "imposters/graph.hpp"
#include "imposters/optim.hpp"

namespace imposters {

struct AnchorSpec {
  std::vector<double> scales = {16, 32, 64};       // box heights, pixels
  std::vector<double> aspectRatios = {0.4, 0.7, 1.0};  // width / height
  int featureStride = 8;

  int anchorsPerCell() const {
    return static_cast<int>(scales.size() * aspectRatios.size());
  }
};

// Anchors centered on cell centers, row-major cells, scale-major within a
// cell. Height = scale, width = ratio * scale.
inline std::vector<BBox> generate_anchors(int imageW, int imageH, const AnchorSpec& spec) {
  if (imageW % spec.featureStride != 0 || imageH % spec.featureStride != 0)
    throw ShapeError("generate_anchors: image size not divisible by feature stride");
  const int cellsX = imageW / spec.featureStride;
  const int cellsY = imageH / spec.featureStride;
  std::vector<BBox> anchors;
  anchors.reserve(static_cast<std::size_t>(cellsX) * cellsY * spec.anchorsPerCell());
  for (int cy = 0; cy < cellsY; ++cy) {
    for (int cx = 0; cx < cellsX; ++cx) {
      const double centerX = (cx + 0.5) * spec.featureStride;
      const double centerY = (cy + 0.5) * spec.featureStride;
      for (double scale : spec.scales)
        for (double ratio : spec.aspectRatios)
          anchors.push_back(BBox::from_center(centerX, centerY, ratio * scale, scale));
    }
  }
  return anchors;
}

enum class AnchorLabel { positive, negative, ignore };

struct AnchorAssignment {
  std::vector<AnchorLabel> labels;
  std::vector<int> matchedGt;  // valid for positives, -1 otherwise
};

// Positive above 0.5 IoU, negative below 0.2, ignore between; additionally
// the best anchor for each ground truth is positive regardless of overlap,
// so every object has at least one trainable anchor.
inline AnchorAssignment assign_anchors(const std::vector<BBox>& anchors,
                                       const GroundTruthLabel& gt,
                                       double positiveIoU = 0.5,
                                       double negativeIoU = 0.2) {
  const std::size_t na = anchors.size(), ng = gt.boxes.size();
  AnchorAssignment out;
  out.labels.assign(na, AnchorLabel::negative);
  out.matchedGt.assign(na, -1);
  if (ng == 0) return out;

  std::vector<std::size_t> bestAnchorForGt(ng, 0);
  std::vector<double> bestIoUForGt(ng, -1.0);
  for (std::size_t i = 0; i < na; ++i) {
    double best = 0;
    int bestGt = -1;
    for (std::size_t j = 0; j < ng; ++j) {
      const double v = iou(anchors[i], gt.boxes[j]);
      if (v > best) {
        best = v;
        bestGt = static_cast<int>(j);
      }
      if (v > bestIoUForGt[j]) {
        bestIoUForGt[j] = v;
        bestAnchorForGt[j] = i;
      }
    }
    if (best > positiveIoU) {
      out.labels[i] = AnchorLabel::positive;
      out.matchedGt[i] = bestGt;
    } else if (best >= negativeIoU) {
      out.labels[i] = AnchorLabel::ignore;
    }
  }
  for (std::size_t j = 0; j < ng; ++j) {
    const std::size_t i = bestAnchorForGt[j];
    if (out.labels[i] != AnchorLabel::positive) {
      out.labels[i] = AnchorLabel::positive;
      out.matchedGt[i] = static_cast<int>(j);
    }
  }
  return out;
}

struct BoxDeltas {
  double dx, dy, dw, dh;
};

inline BoxDeltas encode_box(const BBox& anchor, const BBox& gt) {
  if (anchor.w <= 0 || anchor.h <= 0 || gt.w <= 0 || gt.h <= 0)
    throw std::domain_error("encode_box: non-positive box size");
  return {(gt.cx() - anchor.cx()) / anchor.w, (gt.cy() - anchor.cy()) / anchor.h,
          std::log(gt.w / anchor.w), std::log(gt.h / anchor.h)};
}

inline BBox decode_box(const BBox& anchor, const BoxDeltas& d) {
  if (anchor.w <= 0 || anchor.h <= 0)
    throw std::domain_error("decode_box: non-positive anchor size");
  const double w = anchor.w * std::exp(d.dw);
  const double h = anchor.h * std::exp(d.dh);
  return BBox::from_center(anchor.cx() + d.dx * anchor.w, anchor.cy() + d.dy * anchor.h,
                           w, h);
}

struct Detection {
  BBox box;
  double score;
};

// Greedy NMS: keep highest score first, drop anything overlapping a kept box
// beyond the threshold. Ties broken by original order.
inline std::vector<Detection> nms(std::vector<Detection> dets, double iouThreshold) {
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  std::vector<Detection> kept;
  for (const auto& d : dets) {
    bool suppressed = false;
    for (const auto& k : kept) {
      if (iou(d.box, k.box) > iouThreshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

struct DetectorConfig {
  int inputWidth = 192;
  int inputHeight = 144;
  AnchorSpec anchors;
  std::vector<int> stageChannels = {8, 16, 32};  // three conv stages
  int headChannels = 24;
};

struct DetectorModel {
  DetectorConfig config;
  Graph graph;
  ParameterSet params;
  int scoreNode = -1;  // [9, Hc, Wc] logits
  int regNode = -1;    // [36, Hc, Wc] deltas
  std::vector<BBox> anchorGrid;
};

// Backbone with multi-stage concatenation: stride-4 features are pooled to
// stride 8 and concatenated with the stride-8 stage before the two heads.
inline DetectorModel make_detector(const DetectorConfig& cfg, std::uint64_t seed) {
  if (cfg.stageChannels.size() != 3)
    throw ConfigError("detector expects exactly three backbone stages");
  DetectorModel m;
  m.config = cfg;
  Graph& g = m.graph;
  const int c1 = cfg.stageChannels[0], c2 = cfg.stageChannels[1], c3 = cfg.stageChannels[2];
  int node = g.input("image");
  node = g.maxpool2(g.relu(g.conv2d(node, "conv1", 3, c1, 3)));
  const int stage2 = g.maxpool2(g.relu(g.conv2d(node, "conv2", c1, c2, 3)));
  const int stage3 = g.maxpool2(g.relu(g.conv2d(stage2, "conv3", c2, c3, 3)));
  const int fused = g.concat(g.maxpool2(stage2), stage3);
  const int head =
      g.relu(g.conv2d(fused, "head", c2 + c3, cfg.headChannels, 1, 1, 0));
  const int na = cfg.anchors.anchorsPerCell();
  m.scoreNode = g.conv2d(head, "score", cfg.headChannels, na, 1, 1, 0);
  m.regNode = g.conv2d(head, "reg", cfg.headChannels, na * 4, 1, 1, 0);
  m.params = g.init_params(seed);
  m.anchorGrid = generate_anchors(cfg.inputWidth, cfg.inputHeight, cfg.anchors);
  return m;
}

// Maps flat anchor index -> (channel, cell) position in the output maps.
struct AnchorIndexer {
  int cellsX, cellsY, perCell;
  explicit AnchorIndexer(const DetectorConfig& cfg)
      : cellsX(cfg.inputWidth / cfg.anchors.featureStride),
        cellsY(cfg.inputHeight / cfg.anchors.featureStride),
        perCell(cfg.anchors.anchorsPerCell()) {}
  std::size_t score_offset(std::size_t anchor) const {
    const std::size_t cell = anchor / perCell, a = anchor % perCell;
    return a * cellsX * cellsY + cell;
  }
  std::size_t reg_offset(std::size_t anchor, int d) const {
    const std::size_t cell = anchor / perCell, a = anchor % perCell;
    return (a * 4 + d) * cellsX * cellsY + cell;
  }
};

struct DetectorLoss {
  double total = 0;
  double classification = 0;
  double regression = 0;
  Tensor scoreGrad;
  Tensor regGrad;
};

// Logistic loss over positive+negative anchors plus smooth-L1 over positive
// anchors' deltas, summed per anchor and normalized by the positive count.
// Positives are vastly outnumbered by negatives, so the classification term
// weights the two classes equally (half the mass each) to keep the score
// head from collapsing to all-negative; weights sum to one, so the loss at
// zero logits is ln 2 regardless of the mix. Total = classification +
// regression (lambda = 1).
inline DetectorLoss detector_loss(const Tensor& scoreMap, const Tensor& regMap,
                                  const AnchorAssignment& assign,
                                  const std::vector<BBox>& anchors,
                                  const GroundTruthLabel& gt, const AnchorIndexer& ix) {
  DetectorLoss out;
  out.scoreGrad = Tensor(scoreMap.shape);
  out.regGrad = Tensor(regMap.shape);

  std::size_t nCls = 0, nPos = 0;
  for (auto l : assign.labels) {
    if (l != AnchorLabel::ignore) ++nCls;
    if (l == AnchorLabel::positive) ++nPos;
  }
  if (nCls == 0) throw std::domain_error("detector_loss: no positive or negative anchors");
  const std::size_t nNeg = nCls - nPos;
  const double wPos = nPos > 0 && nNeg > 0 ? 0.5 / nPos : 1.0 / nCls;
  const double wNeg = nPos > 0 && nNeg > 0 ? 0.5 / nNeg : 1.0 / nCls;

  for (std::size_t i = 0; i < assign.labels.size(); ++i) {
    const AnchorLabel l = assign.labels[i];
    if (l == AnchorLabel::ignore) continue;
    const double y = l == AnchorLabel::positive ? 1.0 : 0.0;
    const double w = l == AnchorLabel::positive ? wPos : wNeg;
    const double z = scoreMap.data[ix.score_offset(i)];
    const double sp = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    out.classification += w * (sp - y * z);
    out.scoreGrad.data[ix.score_offset(i)] = w * (1.0 / (1.0 + std::exp(-z)) - y);

    if (l == AnchorLabel::positive) {
      const BoxDeltas target = encode_box(anchors[i], gt.boxes[assign.matchedGt[i]]);
      const double t[4] = {target.dx, target.dy, target.dw, target.dh};
      for (int d = 0; d < 4; ++d) {
        const double r = regMap.data[ix.reg_offset(i, d)] - t[d];
        if (std::abs(r) < 1.0) {
          out.regression += 0.5 * r * r;
          out.regGrad.data[ix.reg_offset(i, d)] = r / static_cast<double>(nPos);
        } else {
          out.regression += std::abs(r) - 0.5;
          out.regGrad.data[ix.reg_offset(i, d)] = (r > 0 ? 1.0 : -1.0) / static_cast<double>(nPos);
        }
      }
    }
  }
  if (nPos > 0) out.regression /= static_cast<double>(nPos);
  out.total = out.classification + out.regression;
  return out;
}

inline std::vector<Detection> detect(const DetectorModel& m, const ImageBuffer& image,
                                     double scoreThreshold, double nmsIoU = 0.5) {
  if (image.width != m.config.inputWidth || image.height != m.config.inputHeight)
    throw ShapeError("detect: image resolution does not match detector input");
  Workspace ws = forward(m.graph, m.params, {{"image", image_to_tensor(image)}});
  const Tensor& scoreMap = ws.act[m.scoreNode];
  const Tensor& regMap = ws.act[m.regNode];
  const AnchorIndexer ix(m.config);

  // Scores are raw logits: any monotone transform leaves the ROC unchanged,
  // and sigmoid saturates to exactly 1.0 for confident detections, which
  // would collapse their ordering into ties.
  std::vector<Detection> cands;
  for (std::size_t i = 0; i < m.anchorGrid.size(); ++i) {
    const double z = scoreMap.data[ix.score_offset(i)];
    const double s = 1.0 / (1.0 + std::exp(-z));
    if (s < scoreThreshold) continue;
    const BoxDeltas d{regMap.data[ix.reg_offset(i, 0)], regMap.data[ix.reg_offset(i, 1)],
                      regMap.data[ix.reg_offset(i, 2)], regMap.data[ix.reg_offset(i, 3)]};
    BBox box = clip_box(decode_box(m.anchorGrid[i], d), image.width, image.height);
    if (box.w <= 0 || box.h <= 0) continue;
    cands.push_back({box, z});
  }
  return nms(std::move(cands), nmsIoU);
}

struct DetectorStageConfig {
  double learningRate = 1e-2;
  double momentum = 0.9;
  int batchSize = 8;
  int epochs = 4;
  int frozenConvLayers = 0;  // freezes conv1..convN
  std::uint64_t seed = 0;
};

inline void set_frozen_conv_layers(DetectorModel& m, int count) {
  for (auto& [name, flag] : m.params.frozen) {
    flag = false;
    for (int i = 1; i <= count; ++i) {
      const std::string prefix = "conv" + std::to_string(i) + ".";
      if (name.rfind(prefix, 0) == 0) flag = true;
    }
  }
}

// One training stage over a dataset; anchor assignments are computed once
// per image. Deterministic given (stage seed, data order).
inline void train_detector_stage(DetectorModel& model, const LabeledDataset& data,
                                 const DetectorStageConfig& stage, int jobs = 1) {
  if (data.items.empty()) throw std::domain_error("train_detector_stage: empty dataset");
  const AnchorIndexer ix(model.config);
  set_frozen_conv_layers(model, stage.frozenConvLayers);

  std::vector<AnchorAssignment> assignments(data.items.size());
  std::vector<Tensor> inputs(data.items.size());
  parallel_for(data.items.size(), jobs, [&](std::size_t i) {
    assignments[i] = assign_anchors(model.anchorGrid, data.items[i].label);
    inputs[i] = image_to_tensor(data.items[i].image);
  });

  OptimizerConfig optCfg;
  optCfg.learningRate = stage.learningRate;
  optCfg.momentum = stage.momentum;
  optCfg.batchSize = stage.batchSize;
  optCfg.epochs = stage.epochs;
  optCfg.seed = stage.seed;

  SgdOptimizer opt;
  Rng shuffleRng(mix_seed(stage.seed, 0xdecull));
  for (int epoch = 1; epoch <= stage.epochs; ++epoch) {
    std::vector<std::size_t> order(data.items.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffleRng.uniform_int(0, static_cast<std::int64_t>(i))]);

    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(stage.batchSize)) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(stage.batchSize));
      std::vector<GradMap> grads(end - start);
      parallel_for(end - start, jobs, [&](std::size_t bi) {
        const std::size_t idx = order[start + bi];
        Workspace ws = forward(model.graph, model.params, {{"image", inputs[idx]}});
        DetectorLoss loss =
            detector_loss(ws.act[model.scoreNode], ws.act[model.regNode],
                          assignments[idx], model.anchorGrid, data.items[idx].label, ix);
        grads[bi] = backward(model.graph, model.params, ws,
                             {{model.scoreNode, loss.scoreGrad},
                              {model.regNode, loss.regGrad}});
      });
      GradMap batchGrad;
      for (const auto& g : grads) {
        for (const auto& [name, t] : g) {
          auto it = batchGrad.find(name);
          if (it == batchGrad.end()) {
            batchGrad[name] = t;
          } else {
            for (std::size_t j = 0; j < t.data.size(); ++j) it->second.data[j] += t.data[j];
          }
        }
      }
      const double inv = 1.0 / static_cast<double>(end - start);
      for (auto& [name, t] : batchGrad)
        for (auto& v : t.data) v *= inv;
      opt.step(model.params, batchGrad, optCfg);
    }
  }
}

}  // namespace imposters
