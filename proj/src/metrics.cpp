#include "bfdn/metrics.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace bfdn {

template <class T>
double mse(const Tensor<T>& reference, const Tensor<T>& estimate) {
  require_same_shape(reference.shape(), estimate.shape(), "mse");
  if (reference.empty()) throw ShapeError("mse: empty tensors");
  double s = 0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const double d = double(reference[i]) - double(estimate[i]);
    s += d * d;
  }
  return s / double(reference.size());
}

template <class T>
double psnr(const Tensor<T>& reference, const Tensor<T>& estimate) {
  const double e = mse(reference, estimate);
  if (e == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(kPeak * kPeak / e);
}

namespace {

std::vector<double> gaussian_taps(int size, double sigma) {
  std::vector<double> g(size);
  const double c = (size - 1) / 2.0;
  double sum = 0;
  for (int i = 0; i < size; ++i) {
    g[i] = std::exp(-((i - c) * (i - c)) / (2 * sigma * sigma));
    sum += g[i];
  }
  for (auto& v : g) v /= sum;
  return g;
}

// Separable "valid" filtering of an h x w plane.
std::vector<double> filter_valid(const std::vector<double>& img, std::size_t h, std::size_t w,
                                 const std::vector<double>& taps) {
  const std::size_t k = taps.size(), oh = h - k + 1, ow = w - k + 1;
  std::vector<double> rows(h * ow), out(oh * ow);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < ow; ++j) {
      double s = 0;
      for (std::size_t t = 0; t < k; ++t) s += taps[t] * img[i * w + j + t];
      rows[i * ow + j] = s;
    }
  for (std::size_t i = 0; i < oh; ++i)
    for (std::size_t j = 0; j < ow; ++j) {
      double s = 0;
      for (std::size_t t = 0; t < k; ++t) s += taps[t] * rows[(i + t) * ow + j];
      out[i * ow + j] = s;
    }
  return out;
}

}  // namespace

template <class T>
double ssim(const Tensor<T>& reference, const Tensor<T>& estimate, const SsimParams& p) {
  require_same_shape(reference.shape(), estimate.shape(), "ssim");
  if (reference.rank() < 2) throw ShapeError("ssim: need at least two axes");
  const std::size_t h = reference.dim(reference.rank() - 2), w = reference.dim(reference.rank() - 1);
  if (reference.size() != h * w) throw ShapeError("ssim: single-channel images only");
  if (h < std::size_t(p.window) || w < std::size_t(p.window))
    throw ShapeError("ssim: image " + std::to_string(h) + "x" + std::to_string(w) + " is smaller than the " +
                     std::to_string(p.window) + "x" + std::to_string(p.window) + " window");
  const auto taps = gaussian_taps(p.window, p.window_sigma);
  std::vector<double> x(h * w), y(h * w), xx(h * w), yy(h * w), xy(h * w);
  for (std::size_t i = 0; i < h * w; ++i) {
    x[i] = reference[i];
    y[i] = estimate[i];
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = filter_valid(x, h, w, taps), my = filter_valid(y, h, w, taps);
  const auto sxx = filter_valid(xx, h, w, taps), syy = filter_valid(yy, h, w, taps), sxy = filter_valid(xy, h, w, taps);
  const double c1 = (p.k1 * p.peak) * (p.k1 * p.peak), c2 = (p.k2 * p.peak) * (p.k2 * p.peak);
  double acc = 0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cxy = sxy[i] - mx[i] * my[i];
    acc += ((2 * mx[i] * my[i] + c1) * (2 * cxy + c2)) / ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
  }
  return acc / double(mx.size());
}

template double mse(const Tensor<float>&, const Tensor<float>&);
template double mse(const Tensor<double>&, const Tensor<double>&);
template double psnr(const Tensor<float>&, const Tensor<float>&);
template double psnr(const Tensor<double>&, const Tensor<double>&);
template double ssim(const Tensor<float>&, const Tensor<float>&, const SsimParams&);
template double ssim(const Tensor<double>&, const Tensor<double>&, const SsimParams&);

}  // namespace bfdn
