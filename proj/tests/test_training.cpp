#include <doctest.h>

#include <cmath>
#include <limits>

#include "bfdn/checkpoint.hpp"
#include "bfdn/dataset.hpp"
#include "bfdn/training.hpp"

using namespace bfdn;

namespace {

ModelConfig tiny(bool bias) {
  ModelConfig c = ModelConfig::desk_scale(Arch::dncnn);
  c.depth = 4;
  c.channels = 8;
  c.bias_enabled = bias;
  return c;
}

TrainConfig quick(std::uint64_t seed) {
  TrainConfig t;
  t.noise = {NoiseDistribution::gaussian, 0, 25};
  t.patch_size = 16;
  t.patch_stride = 16;
  t.batch_size = 4;
  t.epochs = 3;
  t.augment.downsampling = false;
  t.seed = seed;
  return t;
}

std::vector<Image> synth_images(std::size_t n, std::size_t size, std::uint64_t seed) {
  std::vector<Image> out;
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) out.push_back(synth_image(size, rng));
  return out;
}

}  // namespace

TEST_CASE("noise samples") {
  Rng rng(1);
  CHECK(max_abs(sample_noise<double>({4, 4}, 0, NoiseDistribution::gaussian, rng)) == 0.0);
  const auto n = sample_noise<double>({1000000}, 25, NoiseDistribution::gaussian, rng);
  double m = 0, s = 0;
  for (double v : n.data()) m += v;
  m /= double(n.size());
  for (double v : n.data()) s += (v - m) * (v - m);
  s = std::sqrt(s / double(n.size() - 1));
  CHECK(std::abs(m) <= 0.1);
  CHECK(s >= 24.9);
  CHECK(s <= 25.1);
  const auto u = sample_noise<double>({100000}, 30, NoiseDistribution::uniform, rng);
  CHECK(max_abs(u) <= 30 * std::sqrt(3.0));
  CHECK_THROWS_AS(sample_noise<double>({2}, -1, NoiseDistribution::gaussian, rng), std::invalid_argument);
}

TEST_CASE("per-patch sigma draws are flat") {
  // chi-square with 19 degrees of freedom, 99% quantile 36.19
  Rng rng(5);
  const int bins = 20, draws = 100000;
  std::vector<int> hist(bins);
  for (int i = 0; i < draws; ++i) {
    const double s = rng.uniform(0, 55);
    hist[std::min(bins - 1, int(s / 55 * bins))]++;
  }
  double chi2 = 0;
  const double expect = double(draws) / bins;
  for (int h : hist) chi2 += (h - expect) * (h - expect) / expect;
  CHECK(chi2 < 36.19);
}

TEST_CASE("patch extraction") {
  Image img = image_tensor<float>(100, 100);
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = float(i % 251);
  AugmentConfig off{false, false, false, {1.0}};
  Rng rng(0);
  const auto set = make_patches({img}, 50, 50, off, rng);
  REQUIRE(set.patches.size() == 4);
  CHECK(set.patches[3].at(0, 0, 0, 0) == img.at(0, 0, 50, 50));
  CHECK(set.patches[1].at(0, 0, 49, 49) == img.at(0, 0, 49, 99));
  const auto small = make_patches({image_tensor<float>(20, 20)}, 50, 50, off, rng);
  CHECK(small.patches.empty());
  CHECK(small.skipped == 1);
  CHECK(flip_horizontal(flip_horizontal(img)) == img);
  CHECK(rotate90(img, 4) == img);
  CHECK(rotate90(rotate90(img, 1), 3) == img);
  CHECK(resize_bilinear(img, 70, 70).shape() == Shape{1, 1, 70, 70});
  AugmentConfig on;
  Rng r1(3), r2(3);
  const auto p1 = make_patches({img}, 40, 20, on, r1), p2 = make_patches({img}, 40, 20, on, r2);
  CHECK(p1.patches == p2.patches);
  // scales 1, .9, .8, .7 -> 100, 90, 80, 70 pixels -> 4 + 9 + 9 + 4 patches
  CHECK(p1.patches.size() == 16 + 9 + 9 + 4);
}

TEST_CASE("adam single step") {
  Tensor<float> p({1}, 1.0f);
  std::vector<StateEntry<float>> params{{"p", &p, true}};
  AdamState st;
  adam_step(params, {Tensor<float>({1}, 1.0f)}, st, 0.1);
  // m = 0.1, v = 0.001, bias-corrected to 1 and 1
  CHECK(p[0] == doctest::Approx(1.0 - 0.1 / (1.0 + 1e-8)).epsilon(1e-7));
  CHECK(st.step == 1);
  Tensor<float> q({3}, 2.0f);
  std::vector<StateEntry<float>> qp{{"q", &q, true}};
  AdamState s2;
  adam_step(qp, {Tensor<float>({3}, 0.0f)}, s2, 0.1);
  CHECK(q == Tensor<float>({3}, 2.0f));
  Tensor<float> bad({3}, std::numeric_limits<float>::infinity());
  CHECK_THROWS_WITH(adam_step(qp, {bad}, s2, 0.1), doctest::Contains("q"));
}

TEST_CASE("constant images are learned within 200 steps") {
  Rng rng(1);
  ModelConfig mc = ModelConfig::desk_scale(Arch::dncnn);
  auto model = build<float>(mc, rng);
  std::vector<Image> imgs(4, image_tensor<float>(48, 48, 128.0f));
  TrainConfig tc = quick(1);
  tc.noise = {NoiseDistribution::gaussian, 0, 0};
  tc.patch_size = 24;
  tc.patch_stride = 24;
  tc.batch_size = 4;
  tc.epochs = 1000;
  tc.max_steps = 200;
  tc.augment = {false, false, false, {1.0}};
  tc.lr_initial = 1e-3;
  const auto r = train(model, imgs, {}, tc);
  CHECK(r.log.steps == 200);
  CHECK(r.log.rows.back().mse < 1e-2);
  int increases = 0;
  for (std::size_t i = 1; i < r.log.rows.size(); ++i) increases += r.log.rows[i].mse > r.log.rows[i - 1].mse;
  CHECK(increases == 0);
}

TEST_CASE("training is deterministic") {
  const auto imgs = synth_images(5, 48, 2);
  auto run = [&] {
    Rng rng(4);
    auto m = build<float>(tiny(true), rng);
    const auto r = train(m, imgs, quick(4));
    CheckpointMeta meta;
    meta.training_step = r.log.steps;
    return encode_checkpoint(m, &r.optimizer, meta);
  };
  CHECK(run() == run());
}

TEST_CASE("early stopping keeps the best validation epoch") {
  const auto imgs = synth_images(6, 48, 3);
  TrainConfig tc = quick(6);
  tc.epochs = 5;
  tc.lr_initial = 3e-3;
  tc.early_stopping = true;
  tc.validation_fraction = 0.34;
  Rng r1(2);
  auto m = build<float>(tiny(false), r1);
  const auto res = train(m, imgs, tc);
  REQUIRE(res.log.rows.size() == 5);
  int best = 0;
  double best_psnr = -1e300;
  for (const auto& row : res.log.rows)
    if (row.val_psnr > best_psnr) {
      best_psnr = row.val_psnr;
      best = row.epoch;
    }
  CHECK(res.log.best_epoch == best);
  // replaying the first `best` epochs reproduces the kept parameters
  TrainConfig replay = tc;
  replay.early_stopping = false;
  replay.epochs = best;
  Rng r2(2);
  auto m2 = build<float>(tiny(false), r2);
  train(m2, imgs, replay);
  auto a = m.state(), b = m2.state();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(*a[i].tensor == *b[i].tensor);
}

TEST_CASE("training bookkeeping and errors") {
  const auto imgs = synth_images(3, 48, 4);
  TrainConfig tc = quick(1);
  tc.noise = {NoiseDistribution::gaussian, 0, 10};
  tc.epochs = 1;
  Rng rng(1);
  auto m = build<float>(tiny(true), rng);
  const auto r = train(m, imgs, tc);
  CHECK(r.log.sigma_range == std::pair{0.0, 10.0});
  for (std::size_t i = 1; i < r.log.rows.size(); ++i) CHECK(r.log.rows[i].epoch > r.log.rows[i - 1].epoch);
  CHECK_THROWS_AS(train(m, std::vector<Image>{}, tc), std::invalid_argument);
  TrainConfig bad = tc;
  bad.lr_initial = 0;
  CHECK_THROWS_AS(train(m, imgs, bad), std::invalid_argument);
  bad = tc;
  bad.patch_size = 4;
  CHECK_THROWS_AS(train(m, imgs, bad), std::invalid_argument);
  TrainConfig wild = tc;
  wild.lr_initial = 50;
  wild.epochs = 6;
  Rng r2(1);
  auto m2 = build<float>(tiny(true), r2);
  CHECK_THROWS_AS(train(m2, imgs, wild), TrainingDiverged);
}

TEST_CASE("validation split") {
  auto [tr, va] = split_validation(20, 0.1, 3);
  CHECK(tr.size() == 18);
  CHECK(va.size() == 2);
  auto [tr2, va2] = split_validation(20, 0.1, 3);
  CHECK(va == va2);
}
