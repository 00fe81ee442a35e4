#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "bfdn/csv.hpp"
#include "bfdn/model.hpp"
#include "bfdn/training.hpp"

namespace bfdn {

/// Largest image (in pixels) jacobian_full will assemble.
inline constexpr std::size_t kMaxJacobianPixels = 4096;

/// f(y) = A y + b at one input, with the ReLU pattern that realizes it.
struct LocalLinearModel {
  Eigen::MatrixXd A;  // N x N, row r is the adaptive filter of output pixel r
  Eigen::VectorXd b;
  Tensor<double> y;   // [1,1,H,W]
  Tensor<double> f;   // f(y)
  ReluMaskRecord masks;
  std::size_t height = 0, width = 0;
};

struct SvdAnalysis {
  double sigma = 0;
  Eigen::VectorXd s;  // descending
  Eigen::MatrixXd U, V;
  double d = 0;       // sum of s_i^2
  Eigen::VectorXd alignment;  // |<U_i, V_i>|

  /// ceil(d), clamped to [0, N].
  std::size_t cutoff() const;
  double fraction_below(double relative) const;
  /// Median alignment over the first cutoff() indices.
  double median_alignment() const;
};

struct PowerLawFit {
  double exponent = 0;
  double intercept = 0;  // natural log
};

/// Least-squares line through (x, y); non-finite points are skipped.
PowerLawFit fit_line(const std::vector<double>& x, const std::vector<double>& y);

/// Row (i, j) of the Jacobian at y as an image, via one reverse pass.
Tensor<double> jacobian_row(const Model<double>& model, const Tensor<double>& y, std::size_t i, std::size_t j);

/// Column j of the frozen-mask map at y: f_frozen(e_j) - f_frozen(0).
Tensor<double> frozen_column(const Model<double>& model, const ReluMaskRecord& masks, std::size_t height,
                             std::size_t width, std::size_t j);

/// Full Jacobian by output-pixel VJPs, and b = f(y) - A y.
LocalLinearModel jacobian_full(const Model<double>& model, const Tensor<double>& y);

/// max over alpha of |f(alpha y) - alpha f(y)| / (|alpha f(y)| + eps).
double homogeneity_deviation(const Model<double>& model, const Tensor<double>& y, const std::vector<double>& alphas,
                             double eps = 1e-30);

/// Noise draws for row r, image k come from Rng(seed + r + 1).fork(k); the
/// row seed is stored in the noise_seed column.
std::uint64_t row_seed(std::uint64_t seed, std::size_t row);

/// Columns: sigma, residual_norm, bias_norm, output_norm, noise_seed.
/// Norms are l2 on the [0,255] scale, averaged over images; b_y is taken
/// as f_frozen(0).
SweepTable bias_sweep(const Model<double>& model, const std::vector<Image>& images, const std::vector<double>& sigmas,
                      std::uint64_t seed, NoiseDistribution dist = NoiseDistribution::gaussian);

SvdAnalysis svd_analyze(const LocalLinearModel& L, double sigma);
SvdAnalysis svd_analyze(const Eigen::MatrixXd& A, double sigma);

/// |P x|^2 / |x|^2 with P onto the top ceil(d_cut) left singular vectors.
double projection_energy(const SvdAnalysis& S, const Tensor<double>& x_clean, double d_cut);

/// Mean of |P_low u|^2 over the top ceil(d_high) axes u of S_high.
double nested_overlap(const SvdAnalysis& low, const SvdAnalysis& high);

struct DimensionalitySweep {
  SweepTable table;  // sigma, mean_d, noise_seed
  PowerLawFit fit;   // log d against log sigma
};

DimensionalitySweep dimensionality_vs_sigma(const Model<double>& model, const std::vector<Image>& images,
                                            const std::vector<double>& sigmas, std::uint64_t seed);

struct EvalSweep {
  SweepTable table;  // sigma, input_psnr, output_psnr, output_ssim, noise_seed
  double slope = 0;  // output vs input PSNR over the slope range
};

/// Denoising quality per sigma, averaged over images. The slope is fitted on
/// rows with slope_range.first <= sigma <= slope_range.second; it is NaN
/// when fewer than two such rows exist.
EvalSweep eval_sweep(const Model<float>& model, const std::vector<Image>& images, const std::vector<double>& sigmas,
                     NoiseDistribution dist, std::uint64_t seed, std::pair<double, double> slope_range = {30, 100});

}  // namespace bfdn
