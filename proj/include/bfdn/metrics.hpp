#pragma once

#include "bfdn/tensor.hpp"

namespace bfdn {

inline constexpr double kPeak = 255.0;

template <class T>
double mse(const Tensor<T>& reference, const Tensor<T>& estimate);

/// 10 log10(255^2 / MSE); +infinity for identical images.
template <class T>
double psnr(const Tensor<T>& reference, const Tensor<T>& estimate);

/// SSIM constants: K1 = 0.01, K2 = 0.03, L = 255, 11x11 Gaussian window
/// with standard deviation 1.5, averaged over all fully-contained windows.
struct SsimParams {
  double k1 = 0.01;
  double k2 = 0.03;
  double peak = kPeak;
  int window = 11;
  double window_sigma = 1.5;
};

/// Mean local SSIM of two single-channel images (last two axes are H, W).
template <class T>
double ssim(const Tensor<T>& reference, const Tensor<T>& estimate, const SsimParams& params = {});

}  // namespace bfdn
