#include "bfdn/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "bfdn/metrics.hpp"

namespace bfdn {

namespace {

void check_image(const Tensor<double>& y, const char* what) {
  if (y.rank() != 4 || y.dim(0) != 1 || y.dim(1) != 1)
    throw ShapeError(std::string(what) + ": expected a [1,1,H,W] image, got " + shape_string(y.shape()));
}

Eigen::Map<const Eigen::VectorXd> as_vector(const Tensor<double>& t) { return {t.raw(), Eigen::Index(t.size())}; }

double l2(const Tensor<double>& t) { return as_vector(t).norm(); }

}  // namespace

std::size_t SvdAnalysis::cutoff() const {
  const double c = std::ceil(d - 1e-9);
  return std::size_t(std::clamp(c, 0.0, double(s.size())));
}

double SvdAnalysis::fraction_below(double relative) const {
  if (s.size() == 0) return 0;
  const double t = relative * s(0);
  return double((s.array() < t).count()) / double(s.size());
}

double SvdAnalysis::median_alignment() const {
  const std::size_t k = std::max<std::size_t>(cutoff(), 1);
  std::vector<double> a(alignment.data(), alignment.data() + k);
  std::sort(a.begin(), a.end());
  return k % 2 ? a[k / 2] : 0.5 * (a[k / 2 - 1] + a[k / 2]);
}

PowerLawFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw std::invalid_argument("fit_line: x and y differ in length");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) continue;
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
    ++n;
  }
  const double den = double(n) * sxx - sx * sx;
  if (n < 2 || den == 0) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  const double k = (double(n) * sxy - sx * sy) / den;
  return {k, (sy - k * sx) / double(n)};
}

Tensor<double> jacobian_row(const Model<double>& model, const Tensor<double>& y, std::size_t i, std::size_t j) {
  check_image(y, "jacobian_row");
  const std::size_t h = y.dim(2), w = y.dim(3);
  if (i >= h || j >= w)
    throw std::out_of_range("jacobian_row: pixel (" + std::to_string(i) + "," + std::to_string(j) +
                            ") outside the " + std::to_string(h) + "x" + std::to_string(w) + " image");
  Tape<double> tape;
  Var in = tape.input(y, true);
  Var out = forward(model, tape, in, ForwardOptions{});
  Tensor<double> cot(tape.value(out).shape());
  cot.at(0, 0, i, j) = 1;
  return std::move(tape.backward(out, cot, false).inputs.at(0));
}

Tensor<double> frozen_column(const Model<double>& model, const ReluMaskRecord& masks, std::size_t height,
                             std::size_t width, std::size_t j) {
  if (j >= height * width) throw std::out_of_range("frozen_column: index " + std::to_string(j) + " out of range");
  Tensor<double> e = image_tensor<double>(height, width);
  e[j] = 1;
  const Tensor<double> zero = image_tensor<double>(height, width);
  return forward_frozen(model, e, masks) - forward_frozen(model, zero, masks);
}

LocalLinearModel jacobian_full(const Model<double>& model, const Tensor<double>& y) {
  check_image(y, "jacobian_full");
  const std::size_t h = y.dim(2), w = y.dim(3), n = h * w;
  if (n > kMaxJacobianPixels)
    throw std::invalid_argument("jacobian_full: " + std::to_string(h) + "x" + std::to_string(w) + " = " +
                                std::to_string(n) + " pixels exceeds the limit of " +
                                std::to_string(kMaxJacobianPixels) + "; crop the input (e.g. to 40x40)");
  LocalLinearModel L;
  L.y = y;
  L.height = h;
  L.width = w;
  Tape<double> tape;
  Var in = tape.input(y, true);
  Var out = forward(model, tape, in, ForwardOptions{});
  L.f = tape.value(out);
  L.masks = tape.mask_record();
  L.A.resize(Eigen::Index(n), Eigen::Index(n));
  constexpr std::size_t kBlock = 64;
  for (std::size_t r0 = 0; r0 < n; r0 += kBlock) {
    const std::size_t b = std::min(kBlock, n - r0);
    Tensor<double> cot({b, 1, h, w});
    for (std::size_t k = 0; k < b; ++k) cot[k * n + r0 + k] = 1;
    const Tensor<double> rows = tape.input_vjp(out, in, cot);
    for (std::size_t k = 0; k < b; ++k)
      L.A.row(Eigen::Index(r0 + k)) = Eigen::Map<const Eigen::RowVectorXd>(rows.raw() + k * n, Eigen::Index(n));
  }
  L.b = as_vector(L.f) - L.A * as_vector(y);
  return L;
}

double homogeneity_deviation(const Model<double>& model, const Tensor<double>& y, const std::vector<double>& alphas,
                             double eps) {
  const Tensor<double> fy = forward(model, y);
  double worst = 0;
  for (double a : alphas) {
    if (a < 0) throw std::invalid_argument("homogeneity_deviation: alpha must be >= 0");
    const Tensor<double> scaled = a * fy;
    const double dev = l2(forward(model, a * y) - scaled) / (l2(scaled) + eps);
    worst = std::max(worst, dev);
  }
  return worst;
}

std::uint64_t row_seed(std::uint64_t seed, std::size_t row) { return seed + row + 1; }

SweepTable bias_sweep(const Model<double>& model, const std::vector<Image>& images, const std::vector<double>& sigmas,
                      std::uint64_t seed, NoiseDistribution dist) {
  SweepTable t{{"sigma", "residual_norm", "bias_norm", "output_norm", "noise_seed"}, {}};
  if (images.empty()) throw std::invalid_argument("bias_sweep: no images");
  for (std::size_t r = 0; r < sigmas.size(); ++r) {
    const std::uint64_t rs = row_seed(seed, r);
    double res = 0, bias = 0, out = 0;
    for (std::size_t k = 0; k < images.size(); ++k) {
      Rng rng = Rng(rs).fork(k);
      const Tensor<double> x = fit_input(model, images[k].cast<double>());
      const Tensor<double> y = x + sample_noise<double>(x.shape(), sigmas[r], dist, rng);
      const Tensor<double> f = forward(model, y);
      const ReluMaskRecord masks = relu_masks(model, y);
      const Tensor<double> b = forward_frozen(model, Tensor<double>(y.shape()), masks);
      res += l2(y - f);
      bias += l2(b);
      out += l2(f);
    }
    const double n = double(images.size());
    t.add_row({sigmas[r], res / n, bias / n, out / n, double(rs)});
  }
  return t;
}

SvdAnalysis svd_analyze(const Eigen::MatrixXd& A, double sigma) {
  if (A.rows() != A.cols()) throw std::invalid_argument("svd_analyze: Jacobian must be square");
  Eigen::BDCSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullU | Eigen::ComputeFullV);
  if (svd.info() != Eigen::Success) throw std::runtime_error("svd_analyze: SVD did not converge");
  SvdAnalysis S;
  S.sigma = sigma;
  S.s = svd.singularValues();
  S.U = svd.matrixU();
  S.V = svd.matrixV();
  S.d = S.s.squaredNorm();
  S.alignment = (S.U.array() * S.V.array()).colwise().sum().abs().transpose();
  return S;
}

SvdAnalysis svd_analyze(const LocalLinearModel& L, double sigma) { return svd_analyze(L.A, sigma); }

double projection_energy(const SvdAnalysis& S, const Tensor<double>& x_clean, double d_cut) {
  const auto n = std::size_t(S.U.rows());
  if (x_clean.size() != n) throw ShapeError("projection_energy: image size does not match the Jacobian");
  if (d_cut > double(n) + 1e-9) throw std::invalid_argument("projection_energy: d_cut exceeds N");
  const auto k = Eigen::Index(std::clamp(std::ceil(d_cut - 1e-9), 0.0, double(n)));
  const auto x = as_vector(x_clean);
  const double total = x.squaredNorm();
  if (total == 0) return 1.0;
  return (S.U.leftCols(k).transpose() * x).squaredNorm() / total;
}

double nested_overlap(const SvdAnalysis& low, const SvdAnalysis& high) {
  if (low.U.rows() != high.U.rows()) throw ShapeError("nested_overlap: analyses differ in dimension");
  const auto kl = Eigen::Index(low.cutoff()), kh = Eigen::Index(high.cutoff());
  if (kh == 0) return 1.0;
  const Eigen::MatrixXd proj = low.U.leftCols(kl).transpose() * high.U.leftCols(kh);
  return proj.squaredNorm() / double(kh);
}

DimensionalitySweep dimensionality_vs_sigma(const Model<double>& model, const std::vector<Image>& images,
                                            const std::vector<double>& sigmas, std::uint64_t seed) {
  if (sigmas.size() < 3)
    throw std::invalid_argument("dimensionality_vs_sigma: need at least 3 sigma values, got " +
                                std::to_string(sigmas.size()));
  if (images.empty()) throw std::invalid_argument("dimensionality_vs_sigma: no images");
  DimensionalitySweep out;
  out.table.columns = {"sigma", "mean_d", "noise_seed"};
  std::vector<double> lx, ly;
  for (std::size_t r = 0; r < sigmas.size(); ++r) {
    if (!(sigmas[r] > 0)) throw std::invalid_argument("dimensionality_vs_sigma: sigma must be > 0");
    const std::uint64_t rs = row_seed(seed, r);
    double sum = 0;
    for (std::size_t k = 0; k < images.size(); ++k) {
      Rng rng = Rng(rs).fork(k);
      const Tensor<double> x = fit_input(model, images[k].cast<double>());
      const Tensor<double> y = x + sample_noise<double>(x.shape(), sigmas[r], NoiseDistribution::gaussian, rng);
      const LocalLinearModel L = jacobian_full(model, y);
      Eigen::BDCSVD<Eigen::MatrixXd> svd(L.A);
      if (svd.info() != Eigen::Success) throw std::runtime_error("dimensionality_vs_sigma: SVD did not converge");
      sum += svd.singularValues().squaredNorm();
    }
    const double d = sum / double(images.size());
    out.table.add_row({sigmas[r], d, double(rs)});
    lx.push_back(std::log(sigmas[r]));
    ly.push_back(std::log(d));
  }
  out.fit = fit_line(lx, ly);
  return out;
}

EvalSweep eval_sweep(const Model<float>& model, const std::vector<Image>& images, const std::vector<double>& sigmas,
                     NoiseDistribution dist, std::uint64_t seed, std::pair<double, double> slope_range) {
  if (images.empty()) throw std::invalid_argument("eval_sweep: no images");
  EvalSweep out;
  out.table.columns = {"sigma", "input_psnr", "output_psnr", "output_ssim", "noise_seed"};
  std::vector<double> px, py;
  for (std::size_t r = 0; r < sigmas.size(); ++r) {
    const std::uint64_t rs = row_seed(seed, r);
    double in_p = 0, out_p = 0, out_s = 0;
    for (std::size_t k = 0; k < images.size(); ++k) {
      Rng rng = Rng(rs).fork(k);
      const Image x = fit_input(model, images[k]);
      const Image y = x + sample_noise<float>(x.shape(), sigmas[r], dist, rng);
      const Image f = forward(model, y);
      in_p += psnr(x, y);
      out_p += psnr(x, f);
      out_s += ssim(x, f);
    }
    const double n = double(images.size());
    out.table.add_row({sigmas[r], in_p / n, out_p / n, out_s / n, double(rs)});
    if (sigmas[r] >= slope_range.first && sigmas[r] <= slope_range.second && std::isfinite(in_p)) {
      px.push_back(in_p / n);
      py.push_back(out_p / n);
    }
  }
  out.slope = fit_line(px, py).exponent;
  return out;
}

}  // namespace bfdn
