#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "bfdn/checkpoint.hpp"
#include "bfdn/model.hpp"
#include "bfdn/rng.hpp"
#include "bfdn/tensor.hpp"

namespace bfdn {

/// Grayscale image on the [0,255] intensity scale, shape [1,1,H,W].
using Image = Tensor<float>;

enum class NoiseDistribution { gaussian, uniform };

std::string to_string(NoiseDistribution d);
NoiseDistribution noise_distribution_from_string(const std::string& name);

/// Zero-mean additive noise. Standard deviations are on the [0,255] scale;
/// uniform noise has half-width sigma * sqrt(3).
struct NoiseSpec {
  NoiseDistribution distribution = NoiseDistribution::gaussian;
  double sigma_min = 0;
  double sigma_max = 55;

  void validate() const;
  bool operator==(const NoiseSpec&) const = default;
};

template <class T>
Tensor<T> sample_noise(const Shape& shape, double sigma, NoiseDistribution distribution, Rng& rng);

struct AugmentConfig {
  bool flips = true;
  bool rotations = true;
  bool downsampling = true;
  std::vector<double> scales{1.0, 0.9, 0.8, 0.7};
  bool operator==(const AugmentConfig&) const = default;
};

struct PatchSet {
  std::vector<Image> patches;
  std::size_t skipped = 0;  // images too small for even one patch
};

Image flip_horizontal(const Image& img);
Image rotate90(const Image& img, int quarter_turns);
Image resize_bilinear(const Image& img, std::size_t height, std::size_t width);

/// Tile every image (and, with downsampling on, each rescaled copy) into
/// patch x patch crops at the given stride. With flips/rotations on, each
/// patch gets a random flip and a random multiple of 90 degrees.
PatchSet make_patches(const std::vector<Image>& images, std::size_t patch, std::size_t stride,
                      const AugmentConfig& augment, Rng& rng);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool operator==(const AdamConfig&) const = default;
};

/// One bias-corrected Adam update. Throws on a non-finite gradient, naming
/// the parameter.
void adam_step(const std::vector<StateEntry<float>>& params, const std::vector<Tensor<float>>& grads,
               AdamState& state, double lr, const AdamConfig& config = {});

struct LrSchedule {
  enum class Kind { milestones, plateau };
  Kind kind = Kind::milestones;
  std::vector<int> milestones;  // epochs (1-based) after which lr *= factor
  double factor = 0.5;
  bool operator==(const LrSchedule&) const = default;
};

struct TrainConfig {
  NoiseSpec noise;
  std::size_t patch_size = 40;
  std::size_t patch_stride = 20;
  std::size_t batch_size = 8;
  int epochs = 10;
  /// Stop after this many optimizer steps (0 = no cap).
  std::size_t max_steps = 0;
  double lr_initial = 1e-3;
  LrSchedule schedule;
  bool early_stopping = false;
  AugmentConfig augment;
  AdamConfig adam;
  double validation_fraction = 0.1;
  std::uint64_t seed = 0;
  bool deterministic = true;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct TrainLogRow {
  int epoch;
  double mse;
  double val_psnr;
  double lr;
  double seconds;
};

struct TrainLog {
  std::vector<TrainLogRow> rows;
  std::pair<double, double> sigma_range{0, 0};
  std::size_t steps = 0;
  int best_epoch = 0;  // epoch whose parameters were kept (0: final)

  void write_csv(std::ostream& os) const;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  TrainLog log;
  AdamState optimizer;
};

/// Split indices [0, count) into (train, validation) with a seeded shuffle.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_validation(std::size_t count, double fraction,
                                                                                std::uint64_t seed);

/// Minimize the per-pixel MSE between f(x + n) and x, with sigma drawn per
/// patch uniformly from the configured range and fresh noise each epoch.
/// `progress`, when set, is called after every epoch.
TrainResult train(Model<float>& model, const std::vector<Image>& train_images,
                  const std::vector<Image>& validation_images, const TrainConfig& config,
                  const std::function<void(const TrainLogRow&)>& progress = {});

/// As above, holding out validation_fraction of `images` by seed.
TrainResult train(Model<float>& model, const std::vector<Image>& images, const TrainConfig& config,
                  const std::function<void(const TrainLogRow&)>& progress = {});

}  // namespace bfdn
