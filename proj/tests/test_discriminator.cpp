#include <catch2/catch_amalgamated.hpp>

#include "imposters/discriminator.hpp"

using namespace imposters;

namespace {

const DiscriminatorConfig kTinyCfg{16, 12, {4, 8}};

ImageBuffer noise_image(int w, int h, std::uint64_t seed, int base = 0) {
  ImageBuffer img(w, h);
  Rng rng(seed);
  for (auto& v : img.pixels)
    v = static_cast<std::uint8_t>(std::clamp<std::int64_t>(
        base + rng.uniform_int(0, 128), 0, 255));
  return img;
}

LabeledDataset noise_set(int n, std::uint64_t seed, int base = 0) {
  LabeledDataset ds;
  for (int i = 0; i < n; ++i) {
    LabeledExample ex;
    ex.image = noise_image(kTinyCfg.width, kTinyCfg.height, mix_seed(seed, i), base);
    ds.items.push_back(std::move(ex));
  }
  return ds;
}

}  // namespace

TEST_CASE("zero-weight head scores exactly 0.5") {
  DiscriminatorModel m = make_discriminator(kTinyCfg, 1);
  m.params.values.at("head.w") = Tensor(m.params.values.at("head.w").shape);
  m.params.values.at("head.b") = Tensor({1});
  const ImageBuffer img = noise_image(kTinyCfg.width, kTinyCfg.height, 3);
  REQUIRE(score_logit(m, img) == 0.0);
  REQUIRE(score(m, img) == 0.5);
}

TEST_CASE("score rejects mismatched resolutions") {
  DiscriminatorModel m = make_discriminator(kTinyCfg, 1);
  REQUIRE_THROWS_AS(score(m, ImageBuffer(8, 8)), ShapeError);
}

TEST_CASE("training is deterministic in the seed") {
  const LabeledDataset real = noise_set(8, 10, 60);
  const LabeledDataset synth = noise_set(8, 20, 0);
  OptimizerConfig cfg;
  cfg.learningRate = 1e-2;
  cfg.epochs = 2;
  cfg.batchSize = 4;
  cfg.seed = 5;
  const DiscriminatorModel a = train_discriminator(real, synth, kTinyCfg, cfg);
  const DiscriminatorModel b = train_discriminator(real, synth, kTinyCfg, cfg);
  REQUIRE(a.params == b.params);
  // Thread count must not change the result.
  const DiscriminatorModel c =
      train_discriminator(real, synth, kTinyCfg, cfg, nullptr, nullptr, 3);
  REQUIRE(a.params == c.params);
}

TEST_CASE("statistically identical sets give chance-level held-out accuracy") {
  const LabeledDataset real = noise_set(24, 100);
  const LabeledDataset synth = noise_set(24, 200);  // same distribution
  const LabeledDataset heldReal = noise_set(40, 300);
  const LabeledDataset heldSynth = noise_set(40, 400);
  OptimizerConfig cfg;
  cfg.learningRate = 5e-3;
  cfg.epochs = 4;
  cfg.batchSize = 8;
  cfg.seed = 7;
  const DiscriminatorModel m =
      train_discriminator(real, synth, kTinyCfg, cfg, &heldReal, &heldSynth);
  const double acc = m.log.back().heldoutAcc;
  REQUIRE(acc > 0.3);
  REQUIRE(acc < 0.7);
}

TEST_CASE("separable domains reach high held-out accuracy and score margin") {
  // "Real" is brighter by a constant 80: trivially separable.
  const LabeledDataset real = noise_set(24, 1, 110);
  const LabeledDataset synth = noise_set(24, 2, 0);
  const LabeledDataset heldReal = noise_set(24, 3, 110);
  const LabeledDataset heldSynth = noise_set(24, 4, 0);
  OptimizerConfig cfg;
  cfg.learningRate = 2e-2;
  cfg.epochs = 10;
  cfg.batchSize = 8;
  cfg.seed = 9;
  const DiscriminatorModel m =
      train_discriminator(real, synth, kTinyCfg, cfg, &heldReal, &heldSynth);
  REQUIRE(m.log.back().heldoutAcc >= 0.95);
  double realMean = 0, synthMean = 0;
  for (const auto& ex : heldReal.items) realMean += score(m, ex.image);
  for (const auto& ex : heldSynth.items) synthMean += score(m, ex.image);
  realMean /= static_cast<double>(heldReal.items.size());
  synthMean /= static_cast<double>(heldSynth.items.size());
  REQUIRE(realMean - synthMean > 0.3);
}

TEST_CASE("training loss trends down on a separable problem") {
  const LabeledDataset real = noise_set(16, 11, 110);
  const LabeledDataset synth = noise_set(16, 12, 0);
  OptimizerConfig cfg;
  cfg.learningRate = 2e-2;
  cfg.epochs = 8;
  cfg.batchSize = 8;
  cfg.seed = 13;
  const DiscriminatorModel m = train_discriminator(real, synth, kTinyCfg, cfg);
  REQUIRE(m.log.size() == 8);
  REQUIRE(m.log.back().trainLoss < m.log.front().trainLoss);
}

TEST_CASE("one snapshot per epoch, final snapshot equals final params") {
  const LabeledDataset real = noise_set(6, 21, 80);
  const LabeledDataset synth = noise_set(6, 22, 0);
  OptimizerConfig cfg;
  cfg.epochs = 3;
  cfg.batchSize = 4;
  cfg.seed = 2;
  const DiscriminatorModel m = train_discriminator(real, synth, kTinyCfg, cfg);
  REQUIRE(m.epochSnapshots.size() == 3);
  REQUIRE(m.trainedEpochs == 3);
  REQUIRE(m.epochSnapshots.back() == m.params);
  REQUIRE(!(m.epochSnapshots.front() == m.params));
}

TEST_CASE("class weights balance unequal set sizes") {
  // 4 real vs 20 synthetic; weighted loss should still push real scores up.
  const LabeledDataset real = noise_set(4, 31, 110);
  const LabeledDataset synth = noise_set(20, 32, 0);
  OptimizerConfig cfg;
  cfg.learningRate = 2e-2;
  cfg.epochs = 10;
  cfg.batchSize = 8;
  cfg.seed = 3;
  const DiscriminatorModel m = train_discriminator(real, synth, kTinyCfg, cfg);
  double realMean = 0;
  for (const auto& ex : real.items) realMean += score(m, ex.image);
  realMean /= static_cast<double>(real.items.size());
  REQUIRE(realMean > 0.5);
}

TEST_CASE("empty inputs are rejected") {
  const LabeledDataset some = noise_set(2, 41);
  OptimizerConfig cfg;
  REQUIRE_THROWS_AS(train_discriminator(LabeledDataset{}, some, kTinyCfg, cfg),
                    std::domain_error);
  REQUIRE_THROWS_AS(train_discriminator(some, LabeledDataset{}, kTinyCfg, cfg),
                    std::domain_error);
}
