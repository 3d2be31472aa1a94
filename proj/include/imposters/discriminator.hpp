// Binary real-vs-synthetic classifier: architecture, training loop with
// per-epoch snapshots, and scoring.
#pragma once

#include <fstream>
#include <vector>

#include "imposters/dataset.hpp"
#include "imposters/graph.hpp"
#include "imposters/image.hpp"
#include "imposters/optim.hpp"
#include "imposters/util.hpp"

namespace imposters {

inline Tensor image_to_tensor(const ImageBuffer& img) {
  Tensor t({3, img.height, img.width});
  const std::size_t plane = static_cast<std::size_t>(img.width) * img.height;
  for (std::size_t i = 0; i < plane; ++i)
    for (int ch = 0; ch < 3; ++ch)
      t.data[ch * plane + i] = img.pixels[i * 3 + ch] / 255.0;
  return t;
}

struct DiscriminatorConfig {
  int width = 96;
  int height = 72;
  std::vector<int> channels = {8, 16, 32, 32};  // one conv block per entry
};

struct DiscriminatorModel {
  DiscriminatorConfig config;
  Graph graph;
  ParameterSet params;
  int trainedEpochs = 0;
  std::vector<ParameterSet> epochSnapshots;

  struct LogRow {
    int epoch;
    double trainLoss;
    double trainAcc;
    double heldoutAcc;  // -1 when no held-out set was given
  };
  std::vector<LogRow> log;
};

inline Graph build_discriminator_graph(const DiscriminatorConfig& cfg) {
  Graph g;
  int node = g.input("image");
  int c = 3, h = cfg.height, w = cfg.width;
  for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
    node = g.conv2d(node, "conv" + std::to_string(i + 1), c, cfg.channels[i], 3);
    node = g.relu(node);
    node = g.maxpool2(node);
    c = cfg.channels[i];
    h /= 2;
    w /= 2;
  }
  g.fc(node, "head", c * h * w, 1);
  return g;
}

inline DiscriminatorModel make_discriminator(const DiscriminatorConfig& cfg,
                                             std::uint64_t seed) {
  DiscriminatorModel m;
  m.config = cfg;
  m.graph = build_discriminator_graph(cfg);
  m.params = m.graph.init_params(seed);
  return m;
}

inline double score_logit(const DiscriminatorModel& m, const ImageBuffer& image) {
  if (image.width != m.config.width || image.height != m.config.height)
    throw ShapeError("score: image resolution does not match discriminator input");
  Workspace ws = forward(m.graph, m.params, {{"image", image_to_tensor(image)}});
  return ws.act.back().data[0];
}

inline double score(const DiscriminatorModel& m, const ImageBuffer& image) {
  return 1.0 / (1.0 + std::exp(-score_logit(m, image)));
}

// Trains with labels real=1 / synthetic=0 and per-class weights that
// equalize the two classes' effective contribution. Snapshots after every
// epoch feed the discriminator-quality sweep.
inline DiscriminatorModel train_discriminator(const LabeledDataset& realSet,
                                              const LabeledDataset& synthSet,
                                              const DiscriminatorConfig& discCfg,
                                              const OptimizerConfig& cfg,
                                              const LabeledDataset* heldoutReal = nullptr,
                                              const LabeledDataset* heldoutSynth = nullptr,
                                              int jobs = 1) {
  if (realSet.items.empty() || synthSet.items.empty())
    throw std::domain_error("train_discriminator: empty dataset");
  cfg.validate();

  DiscriminatorModel model = make_discriminator(discCfg, cfg.seed);

  struct Sample {
    const ImageBuffer* image;
    double label;
    double weight;
  };
  const double nr = static_cast<double>(realSet.items.size());
  const double ns = static_cast<double>(synthSet.items.size());
  const double n = nr + ns;
  std::vector<Sample> samples;
  for (const auto& ex : realSet.items) samples.push_back({&ex.image, 1.0, n / (2 * nr)});
  for (const auto& ex : synthSet.items) samples.push_back({&ex.image, 0.0, n / (2 * ns)});

  SgdOptimizer opt;
  Rng shuffleRng(mix_seed(cfg.seed, 0x5ffull));

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    // Fisher-Yates with the deterministic generator.
    std::vector<std::size_t> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffleRng.uniform_int(0, static_cast<std::int64_t>(i))]);

    double epochLoss = 0, epochWeight = 0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batchSize)) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batchSize));
      std::vector<double> losses(end - start), weights(end - start);
      std::vector<int> hits(end - start);
      std::vector<GradMap> grads(end - start);
      parallel_for(end - start, jobs, [&](std::size_t bi) {
        const Sample& s = samples[order[start + bi]];
        Workspace ws = forward(model.graph, model.params,
                               {{"image", image_to_tensor(*s.image)}});
        const int last = static_cast<int>(model.graph.nodes().size()) - 1;
        const double z = ws.act[last].data[0];
        auto [loss, grad] =
            logistic_loss(ws.act[last], Tensor::scalar(s.label));
        for (auto& v : grad.data) v *= s.weight;
        losses[bi] = loss * s.weight;
        weights[bi] = s.weight;
        hits[bi] = ((z > 0) == (s.label > 0.5)) ? 1 : 0;
        grads[bi] = backward(model.graph, model.params, ws, {{last, grad}});
      });
      // Deterministic reduction in batch order.
      GradMap batchGrad;
      double wsum = 0;
      for (std::size_t bi = 0; bi < grads.size(); ++bi) {
        wsum += weights[bi];
        epochLoss += losses[bi];
        epochWeight += weights[bi];
        correct += static_cast<std::size_t>(hits[bi]);
        for (auto& [name, g] : grads[bi]) {
          auto it = batchGrad.find(name);
          if (it == batchGrad.end()) {
            batchGrad[name] = g;
          } else {
            for (std::size_t j = 0; j < g.data.size(); ++j) it->second.data[j] += g.data[j];
          }
        }
      }
      for (auto& [name, g] : batchGrad)
        for (auto& v : g.data) v /= wsum;
      opt.step(model.params, batchGrad, cfg);
    }

    model.trainedEpochs = epoch;
    model.epochSnapshots.push_back(model.params);

    double heldAcc = -1;
    if (heldoutReal && heldoutSynth) {
      std::size_t hc = 0, ht = 0;
      for (const auto& ex : heldoutReal->items) {
        if (score_logit(model, ex.image) > 0) ++hc;
        ++ht;
      }
      for (const auto& ex : heldoutSynth->items) {
        if (score_logit(model, ex.image) <= 0) ++hc;
        ++ht;
      }
      heldAcc = static_cast<double>(hc) / static_cast<double>(ht);
    }
    model.log.push_back({epoch, epochLoss / epochWeight,
                         static_cast<double>(correct) / static_cast<double>(samples.size()),
                         heldAcc});
  }
  return model;
}

inline void write_training_log(const DiscriminatorModel& m,
                               const std::filesystem::path& path) {
  std::ofstream out(path);
  out << "epoch,trainLoss,trainAcc,heldoutAcc\n";
  for (const auto& row : m.log)
    out << row.epoch << "," << row.trainLoss << "," << row.trainAcc << ","
        << row.heldoutAcc << "\n";
}

}  // namespace imposters
