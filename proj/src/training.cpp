#include "bfdn/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

#include "bfdn/csv.hpp"
#include "bfdn/metrics.hpp"

namespace bfdn {

std::string to_string(NoiseDistribution d) { return d == NoiseDistribution::gaussian ? "gaussian" : "uniform"; }

NoiseDistribution noise_distribution_from_string(const std::string& name) {
  if (name == "gaussian") return NoiseDistribution::gaussian;
  if (name == "uniform") return NoiseDistribution::uniform;
  throw std::invalid_argument("unknown noise distribution '" + name + "'");
}

void NoiseSpec::validate() const {
  if (!(sigma_min >= 0) || !(sigma_max >= sigma_min))
    throw std::invalid_argument("noise spec: need 0 <= sigma_min <= sigma_max");
}

void TrainConfig::validate() const {
  noise.validate();
  if (!(lr_initial > 0)) throw std::invalid_argument("train config: lr_initial must be > 0");
  if (patch_size < 8) throw std::invalid_argument("train config: patch_size must be >= 8");
  if (patch_stride < 1) throw std::invalid_argument("train config: patch_stride must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
  if (epochs < 0) throw std::invalid_argument("train config: epochs must be >= 0");
  if (validation_fraction < 0 || validation_fraction >= 1)
    throw std::invalid_argument("train config: validation_fraction must be in [0, 1)");
  if (augment.downsampling)
    for (double s : augment.scales)
      if (!(s > 0 && s <= 1)) throw std::invalid_argument("train config: downsampling scales must be in (0, 1]");
}

template <class T>
Tensor<T> sample_noise(const Shape& shape, double sigma, NoiseDistribution distribution, Rng& rng) {
  if (!(sigma >= 0)) throw std::invalid_argument("sample_noise: sigma must be >= 0");
  Tensor<T> n(shape);
  if (sigma == 0) return n;
  if (distribution == NoiseDistribution::gaussian) {
    for (auto& v : n.data()) v = T(sigma * rng.normal());
  } else {
    const double half = sigma * std::sqrt(3.0);
    for (auto& v : n.data()) v = T(rng.uniform(-half, half));
  }
  return n;
}

// ---------------------------------------------------------------- patches

Image flip_horizontal(const Image& img) {
  const std::size_t h = img.dim(2), w = img.dim(3);
  Image out(img.shape());
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) out.at(0, 0, i, j) = img.at(0, 0, i, w - 1 - j);
  return out;
}

Image rotate90(const Image& img, int quarter_turns) {
  const int q = ((quarter_turns % 4) + 4) % 4;
  Image cur = img;
  for (int t = 0; t < q; ++t) {
    const std::size_t h = cur.dim(2), w = cur.dim(3);
    Image next = image_tensor<float>(w, h);
    // counter-clockwise: new(i, j) = old(j, w - 1 - i)
    for (std::size_t i = 0; i < w; ++i)
      for (std::size_t j = 0; j < h; ++j) next.at(0, 0, i, j) = cur.at(0, 0, j, w - 1 - i);
    cur = std::move(next);
  }
  return cur;
}

Image resize_bilinear(const Image& img, std::size_t height, std::size_t width) {
  const std::size_t h = img.dim(2), w = img.dim(3);
  if (height == h && width == w) return img;
  Image out = image_tensor<float>(height, width);
  const double sy = double(h) / double(height), sx = double(w) / double(width);
  for (std::size_t i = 0; i < height; ++i) {
    const double fy = std::clamp((i + 0.5) * sy - 0.5, 0.0, double(h - 1));
    const std::size_t y0 = std::size_t(fy), y1 = std::min(y0 + 1, h - 1);
    const double ay = fy - double(y0);
    for (std::size_t j = 0; j < width; ++j) {
      const double fx = std::clamp((j + 0.5) * sx - 0.5, 0.0, double(w - 1));
      const std::size_t x0 = std::size_t(fx), x1 = std::min(x0 + 1, w - 1);
      const double ax = fx - double(x0);
      const double top = (1 - ax) * img.at(0, 0, y0, x0) + ax * img.at(0, 0, y0, x1);
      const double bot = (1 - ax) * img.at(0, 0, y1, x0) + ax * img.at(0, 0, y1, x1);
      out.at(0, 0, i, j) = float((1 - ay) * top + ay * bot);
    }
  }
  return out;
}

PatchSet make_patches(const std::vector<Image>& images, std::size_t patch, std::size_t stride,
                      const AugmentConfig& augment, Rng& rng) {
  if (patch == 0 || stride == 0) throw std::invalid_argument("make_patches: patch and stride must be positive");
  PatchSet set;
  const std::vector<double> unit{1.0};
  const auto& scales = augment.downsampling ? augment.scales : unit;
  for (const auto& img : images) {
    std::size_t produced = 0;
    for (double s : scales) {
      const auto h = std::size_t(std::lround(img.dim(2) * s)), w = std::size_t(std::lround(img.dim(3) * s));
      if (h < patch || w < patch) continue;
      const Image scaled = resize_bilinear(img, h, w);
      for (std::size_t i = 0; i + patch <= h; i += stride) {
        for (std::size_t j = 0; j + patch <= w; j += stride) {
          Image p = image_tensor<float>(patch, patch);
          for (std::size_t a = 0; a < patch; ++a)
            for (std::size_t b = 0; b < patch; ++b) p.at(0, 0, a, b) = scaled.at(0, 0, i + a, j + b);
          if (augment.flips && rng.below(2)) p = flip_horizontal(p);
          if (augment.rotations) p = rotate90(p, int(rng.below(4)));
          set.patches.push_back(std::move(p));
          ++produced;
        }
      }
    }
    if (produced == 0) ++set.skipped;
  }
  return set;
}

// ---------------------------------------------------------------- adam

void adam_step(const std::vector<StateEntry<float>>& params, const std::vector<Tensor<float>>& grads,
               AdamState& state, double lr, const AdamConfig& cfg) {
  if (grads.size() != params.size())
    throw std::invalid_argument("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                                std::to_string(params.size()) + " parameters");
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.tensor->shape());
      state.v.emplace_back(p.tensor->shape());
    }
  }
  if (state.m.size() != params.size()) throw std::invalid_argument("adam_step: optimizer state does not match model");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (grads[k].empty()) continue;
    require_same_shape(grads[k].shape(), params[k].tensor->shape(), ("adam_step: " + params[k].name).c_str());
    require_same_shape(state.m[k].shape(), params[k].tensor->shape(), ("adam_step state: " + params[k].name).c_str());
    if (!all_finite(grads[k])) throw std::domain_error("adam_step: non-finite gradient for parameter " + params[k].name);
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, double(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, double(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (grads[k].empty()) continue;
    auto& p = *params[k].tensor;
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double g = grads[k][i];
      const double mi = cfg.beta1 * m[i] + (1 - cfg.beta1) * g;
      const double vi = cfg.beta2 * v[i] + (1 - cfg.beta2) * g * g;
      m[i] = float(mi);
      v[i] = float(vi);
      p[i] = float(double(p[i]) - lr * (mi / c1) / (std::sqrt(vi / c2) + cfg.eps));
    }
  }
}

// ---------------------------------------------------------------- train

void TrainLog::write_csv(std::ostream& os) const {
  os << "epoch,mse,val_psnr,lr,seconds\n";
  for (const auto& r : rows)
    os << r.epoch << ',' << format_number(r.mse) << ',' << format_number(r.val_psnr) << ',' << format_number(r.lr)
       << ',' << format_number(r.seconds) << '\n';
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_validation(std::size_t count, double fraction,
                                                                                std::uint64_t seed) {
  if (count == 0) return {};
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng(seed).fork(0x5eed);
  for (std::size_t i = count; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  std::size_t nval = std::size_t(std::lround(fraction * double(count)));
  if (fraction > 0 && nval == 0 && count >= 2) nval = 1;
  if (nval >= count) nval = count - 1;
  std::vector<std::size_t> val(order.begin(), order.begin() + nval), tr(order.begin() + nval, order.end());
  std::sort(val.begin(), val.end());
  std::sort(tr.begin(), tr.end());
  return {tr, val};
}

namespace {

struct ThreadScope {
  int saved;
  explicit ThreadScope(bool deterministic) : saved(ops::max_threads()) {
    if (deterministic) ops::set_max_threads(1);
  }
  ~ThreadScope() { ops::set_max_threads(saved); }
};

std::vector<Tensor<float>> snapshot(const Model<float>& model) {
  std::vector<Tensor<float>> s;
  for (const auto& e : model.state()) s.push_back(*e.tensor);
  return s;
}

void restore(Model<float>& model, const std::vector<Tensor<float>>& s) {
  auto st = model.state();
  for (std::size_t i = 0; i < st.size(); ++i) *st[i].tensor = s[i];
}

}  // namespace

TrainResult train(Model<float>& model, const std::vector<Image>& images, const TrainConfig& config,
                  const std::function<void(const TrainLogRow&)>& progress) {
  auto [train_idx, val_idx] = split_validation(images.size(), config.validation_fraction, config.seed);
  std::vector<Image> train_images, val_images;
  for (auto i : train_idx) train_images.push_back(images[i]);
  for (auto i : val_idx) val_images.push_back(images[i]);
  return train(model, train_images, val_images, config, progress);
}

TrainResult train(Model<float>& model, const std::vector<Image>& train_images,
                  const std::vector<Image>& validation_images, const TrainConfig& config,
                  const std::function<void(const TrainLogRow&)>& progress) {
  config.validate();
  if (train_images.empty()) throw std::invalid_argument("train: empty training set");
  ThreadScope threads(config.deterministic);
  const Rng base(config.seed);

  std::vector<Image> val_clean;
  for (const auto& v : validation_images) val_clean.push_back(fit_input(model, v));

  Rng patch_rng = base.fork(1);
  const PatchSet patches = make_patches(train_images, config.patch_size, config.patch_stride, config.augment, patch_rng);
  if (patches.patches.empty()) throw std::invalid_argument("train: no training patches (images smaller than patch)");

  // validation noise is drawn once so PSNR is comparable across epochs
  std::vector<Image> val_noisy;
  Rng val_rng = base.fork(2);
  for (const auto& x : val_clean) {
    const double sigma = val_rng.uniform(config.noise.sigma_min, config.noise.sigma_max);
    val_noisy.push_back(x + sample_noise<float>(x.shape(), sigma, config.noise.distribution, val_rng));
  }
  auto validate_psnr = [&]() {
    if (val_clean.empty()) return std::numeric_limits<double>::quiet_NaN();
    double s = 0;
    for (std::size_t i = 0; i < val_clean.size(); ++i) s += psnr(val_clean[i], forward(model, val_noisy[i]));
    return s / double(val_clean.size());
  };

  TrainResult result;
  TrainLog& log = result.log;
  log.sigma_range = {config.noise.sigma_min, config.noise.sigma_max};
  AdamState& opt = result.optimizer;
  Rng rng = base.fork(3);
  const auto params = model.parameters();
  double lr = config.lr_initial;
  double initial_mse = -1;
  int above = 0;
  double best_psnr = -std::numeric_limits<double>::infinity();
  std::vector<Tensor<float>> best_state;
  double prev_psnr = std::numeric_limits<double>::quiet_NaN();
  const auto t0 = std::chrono::steady_clock::now();

  std::vector<std::size_t> order(patches.patches.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t p = config.patch_size;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    if (config.max_steps && log.steps >= config.max_steps) break;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    double sum_sq = 0;
    std::size_t sum_n = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      if (config.max_steps && log.steps >= config.max_steps) break;
      const std::size_t b = std::min(config.batch_size, order.size() - start);
      Tensor<float> clean({b, 1, p, p}), noisy({b, 1, p, p});
      for (std::size_t k = 0; k < b; ++k) {
        const Image& x = patches.patches[order[start + k]];
        const double sigma = rng.uniform(config.noise.sigma_min, config.noise.sigma_max);
        const Image n = sample_noise<float>(x.shape(), sigma, config.noise.distribution, rng);
        std::copy(x.data().begin(), x.data().end(), clean.raw() + k * p * p);
        for (std::size_t i = 0; i < p * p; ++i) noisy[k * p * p + i] = x[i] + n[i];
      }
      Tape<float> tape;
      ForwardOptions fo;
      fo.mode = Mode::train;
      if (model.config.arch == Arch::rcnn) fo.steps = 1 + int(rng.below(std::uint64_t(model.config.recurrence_t_max)));
      std::vector<NormStats> stats;
      Var out = forward(model, tape, tape.input(noisy, false), fo, &stats);
      const Tensor<float>& f = tape.value(out);
      Tensor<float> cot(f.shape());
      double sq = 0;
      const double scale = 2.0 / double(f.size());
      for (std::size_t i = 0; i < f.size(); ++i) {
        const double d = double(f[i]) - double(clean[i]);
        sq += d * d;
        cot[i] = float(scale * d);
      }
      if (!std::isfinite(sq)) throw TrainingDiverged("train: non-finite loss at step " + std::to_string(log.steps));
      auto grads = tape.backward(out, cot, true);
      update_running_stats(model, stats, b * p * p);
      try {
        adam_step(params, grads.params, opt, lr, config.adam);
      } catch (const std::domain_error& e) {
        throw TrainingDiverged(std::string("train: ") + e.what() + " at step " + std::to_string(log.steps));
      }
      ++log.steps;
      if (initial_mse < 0) initial_mse = sq / double(f.size());
      sum_sq += sq;
      sum_n += f.size();
    }
    if (sum_n == 0) break;
    const double epoch_mse = sum_sq / double(sum_n);
    const double vpsnr = validate_psnr();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    TrainLogRow row{epoch, epoch_mse, vpsnr, lr, secs};
    log.rows.push_back(row);
    if (progress) progress(row);

    above = epoch_mse > 10 * initial_mse ? above + 1 : 0;
    if (above >= 3)
      throw TrainingDiverged("train: MSE " + format_number(epoch_mse) + " exceeded 10x the initial " +
                             format_number(initial_mse) + " for 3 consecutive epochs");

    if (config.early_stopping && std::isfinite(vpsnr) && vpsnr > best_psnr) {
      best_psnr = vpsnr;
      best_state = snapshot(model);
      log.best_epoch = epoch;
    }
    if (config.schedule.kind == LrSchedule::Kind::milestones) {
      if (std::find(config.schedule.milestones.begin(), config.schedule.milestones.end(), epoch) !=
          config.schedule.milestones.end())
        lr *= config.schedule.factor;
    } else if (!std::isnan(prev_psnr) && vpsnr < prev_psnr) {
      lr *= config.schedule.factor;
    }
    prev_psnr = vpsnr;
  }
  if (config.early_stopping && !best_state.empty()) restore(model, best_state);
  return result;
}

template Tensor<float> sample_noise(const Shape&, double, NoiseDistribution, Rng&);
template Tensor<double> sample_noise(const Shape&, double, NoiseDistribution, Rng&);

}  // namespace bfdn
