#include "bfdn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <string>
#include <thread>

#include "bfdn/norm.hpp"

namespace bfdn {

ConvSpec ConvSpec::same(int kernel, int dilation) {
  ConvSpec s;
  s.kernel_h = s.kernel_w = kernel;
  s.dilation = dilation;
  s.padding = (kernel / 2) * dilation;
  return s;
}

std::size_t conv_output_extent(std::size_t in, int kernel, const ConvSpec& spec, const char* axis) {
  if (spec.stride < 1 || spec.dilation < 1 || spec.padding < 0 || kernel < 1)
    throw ShapeError(std::string("conv2d: invalid geometry along ") + axis);
  long long out;
  if (!spec.transpose) {
    const long long span = (long long)in + 2LL * spec.padding - (long long)spec.dilation * (kernel - 1) - 1;
    out = span < 0 ? 0 : span / spec.stride + 1;
  } else {
    out = ((long long)in - 1) * spec.stride - 2LL * spec.padding + (long long)spec.dilation * (kernel - 1) + 1 +
          spec.output_padding;
  }
  if (out < 1)
    throw ShapeError(std::string("conv2d: output ") + axis + " extent would be " + std::to_string(out) +
                     " for input extent " + std::to_string(in));
  return static_cast<std::size_t>(out);
}

namespace ops {

namespace {

std::atomic<int> g_max_threads{0};

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using MapConstMat = Eigen::Map<const RowMat<T>>;

struct Geometry {
  std::size_t in_c, in_h, in_w;
  std::size_t out_h, out_w;
  int kh, kw, stride, dilation, padding;

  std::size_t cols() const { return in_c * std::size_t(kh) * std::size_t(kw); }
  std::size_t pixels() const { return out_h * out_w; }
  bool pointwise() const {
    return kh == 1 && kw == 1 && stride == 1 && padding == 0 && in_h == out_h && in_w == out_w;
  }
};

// Output columns [lo, hi) whose input column ow*stride - padding + kj*dilation
// lies inside [0, W).
std::pair<std::size_t, std::size_t> valid_columns(const Geometry& g, int kj) {
  const long off = long(kj) * g.dilation - g.padding, s = g.stride, W = long(g.in_w);
  const long lo = off >= 0 ? 0 : (-off + s - 1) / s;
  const long hi = W - 1 - off < 0 ? 0 : (W - 1 - off) / s + 1;
  const long a = std::min<long>(lo, long(g.out_w)), b = std::clamp<long>(hi, a, long(g.out_w));
  return {std::size_t(a), std::size_t(b)};
}

// col[(c*kh + ki)*kw + kj][oh*out_w + ow] = x[c][oh*s - p + ki*d][ow*s - p + kj*d]
template <class T>
void im2col(const T* x, const Geometry& g, T* col) {
  const long H = long(g.in_h), W = long(g.in_w);
  for (std::size_t c = 0; c < g.in_c; ++c) {
    const T* xc = x + c * g.in_h * g.in_w;
    for (int ki = 0; ki < g.kh; ++ki) {
      for (int kj = 0; kj < g.kw; ++kj) {
        T* row = col + ((c * g.kh + ki) * g.kw + kj) * g.pixels();
        const auto [lo, hi] = valid_columns(g, kj);
        const long off = long(kj) * g.dilation - g.padding;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const long ih = long(oh) * g.stride - g.padding + long(ki) * g.dilation;
          T* dst = row + oh * g.out_w;
          if (ih < 0 || ih >= H) {
            std::fill(dst, dst + g.out_w, T(0));
            continue;
          }
          const T* src = xc + ih * W;
          std::fill(dst, dst + lo, T(0));
          if (g.stride == 1) {
            if (hi > lo) std::copy_n(src + (long(lo) + off), hi - lo, dst + lo);
          } else {
            for (std::size_t ow = lo; ow < hi; ++ow) dst[ow] = src[long(ow) * g.stride + off];
          }
          std::fill(dst + hi, dst + g.out_w, T(0));
        }
      }
    }
  }
}

template <class T>
void col2im(const T* col, const Geometry& g, T* x) {
  const long H = long(g.in_h), W = long(g.in_w);
  std::fill(x, x + g.in_c * g.in_h * g.in_w, T(0));
  for (std::size_t c = 0; c < g.in_c; ++c) {
    T* xc = x + c * g.in_h * g.in_w;
    for (int ki = 0; ki < g.kh; ++ki) {
      for (int kj = 0; kj < g.kw; ++kj) {
        const T* row = col + ((c * g.kh + ki) * g.kw + kj) * g.pixels();
        const auto [lo, hi] = valid_columns(g, kj);
        const long off = long(kj) * g.dilation - g.padding;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const long ih = long(oh) * g.stride - g.padding + long(ki) * g.dilation;
          if (ih < 0 || ih >= H) continue;
          const T* src = row + oh * g.out_w;
          T* dst = xc + ih * W;
          for (std::size_t ow = lo; ow < hi; ++ow) dst[long(ow) * g.stride + off] += src[ow];
        }
      }
    }
  }
}

// out[N,Co,Ho,Wo] = correlate(x[N,Ci,H,W], w[Co,Ci,kh,kw])
template <class T>
Tensor<T> correlate(const Tensor<T>& x, const Tensor<T>& w, const Geometry& g) {
  const std::size_t n = x.dim(0), co = w.dim(0);
  Tensor<T> out({n, co, g.out_h, g.out_w});
  MapConstMat<T> wm(w.raw(), Eigen::Index(co), Eigen::Index(g.cols()));
  parallel_for(n, [&](std::size_t s) {
    const T* xs = x.raw() + s * g.in_c * g.in_h * g.in_w;
    MapMat<T> om(out.raw() + s * co * g.pixels(), Eigen::Index(co), Eigen::Index(g.pixels()));
    if (g.pointwise()) {
      om.noalias() = wm * MapConstMat<T>(xs, Eigen::Index(g.cols()), Eigen::Index(g.pixels()));
      return;
    }
    std::vector<T> col(g.cols() * g.pixels());
    im2col(xs, g, col.data());
    om.noalias() = wm * MapConstMat<T>(col.data(), Eigen::Index(g.cols()), Eigen::Index(g.pixels()));
  });
  return out;
}

// Adjoint of correlate with respect to x.
template <class T>
Tensor<T> correlate_adjoint(const Tensor<T>& gout, const Tensor<T>& w, const Geometry& g) {
  const std::size_t n = gout.dim(0), co = w.dim(0);
  Tensor<T> gx({n, g.in_c, g.in_h, g.in_w});
  MapConstMat<T> wm(w.raw(), Eigen::Index(co), Eigen::Index(g.cols()));
  parallel_for(n, [&](std::size_t s) {
    MapConstMat<T> gm(gout.raw() + s * co * g.pixels(), Eigen::Index(co), Eigen::Index(g.pixels()));
    T* xs = gx.raw() + s * g.in_c * g.in_h * g.in_w;
    if (g.pointwise()) {
      MapMat<T>(xs, Eigen::Index(g.cols()), Eigen::Index(g.pixels())).noalias() = wm.transpose() * gm;
      return;
    }
    std::vector<T> col(g.cols() * g.pixels());
    MapMat<T>(col.data(), Eigen::Index(g.cols()), Eigen::Index(g.pixels())).noalias() = wm.transpose() * gm;
    col2im(col.data(), g, xs);
  });
  return gx;
}

// d<gout, correlate(x, w)>/dw, summed over the batch in sample order.
template <class T>
Tensor<T> correlate_weight_grad(const Tensor<T>& x, const Tensor<T>& gout, const Geometry& g, std::size_t co) {
  const std::size_t n = x.dim(0);
  if (gout.dim(0) != n) throw ShapeError("conv2d weight gradient: batch dimension 0 differs between input and cotangent");
  const std::size_t k = g.cols();
  std::vector<std::vector<T>> partial(n, std::vector<T>(co * k));
  parallel_for(n, [&](std::size_t s) {
    const T* xs = x.raw() + s * g.in_c * g.in_h * g.in_w;
    MapConstMat<T> gm(gout.raw() + s * co * g.pixels(), Eigen::Index(co), Eigen::Index(g.pixels()));
    MapMat<T> pm(partial[s].data(), Eigen::Index(co), Eigen::Index(k));
    if (g.pointwise()) {
      pm.noalias() = gm * MapConstMat<T>(xs, Eigen::Index(k), Eigen::Index(g.pixels())).transpose();
      return;
    }
    std::vector<T> col(k * g.pixels());
    im2col(xs, g, col.data());
    pm.noalias() = gm * MapConstMat<T>(col.data(), Eigen::Index(k), Eigen::Index(g.pixels())).transpose();
  });
  Tensor<T> gw({co, g.in_c, std::size_t(g.kh), std::size_t(g.kw)});
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t i = 0; i < gw.size(); ++i) gw[i] += partial[s][i];
  return gw;
}

Geometry make_geometry(std::size_t in_c, std::size_t in_h, std::size_t in_w, std::size_t out_h,
                       std::size_t out_w, const ConvSpec& spec) {
  return Geometry{in_c, in_h, in_w, out_h, out_w, spec.kernel_h, spec.kernel_w,
                  spec.stride, spec.dilation, spec.padding};
}

void check_rank4(const Shape& s, const char* what) {
  if (s.size() != 4) throw ShapeError(std::string(what) + ": expected rank-4 tensor, got " + shape_string(s));
}

void check_kernel(const Shape& ws, const ConvSpec& spec) {
  if (ws[2] != std::size_t(spec.kernel_h))
    throw ShapeError("conv2d: weight dimension 2 (kernel height) is " + std::to_string(ws[2]) +
                     " but spec says " + std::to_string(spec.kernel_h));
  if (ws[3] != std::size_t(spec.kernel_w))
    throw ShapeError("conv2d: weight dimension 3 (kernel width) is " + std::to_string(ws[3]) +
                     " but spec says " + std::to_string(spec.kernel_w));
}

}  // namespace

void set_max_threads(int n) { g_max_threads = std::max(0, n); }

int max_threads() {
  int n = g_max_threads.load();
  if (n > 0) return n;
  if (const char* env = std::getenv("BFDN_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body) {
  const std::size_t workers = std::min<std::size_t>(count, std::size_t(max_threads()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (std::size_t t = 0; t < workers; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) body(i);
    });
  }
}

template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias, const ConvSpec& spec) {
  check_rank4(x.shape(), "conv2d input");
  check_rank4(w.shape(), "conv2d weight");
  check_kernel(w.shape(), spec);
  const std::size_t h = x.dim(2), wd = x.dim(3);
  Tensor<T> out;
  std::size_t co;
  if (!spec.transpose) {
    if (w.dim(1) != x.dim(1))
      throw ShapeError("conv2d: input channels (dimension 1) is " + std::to_string(x.dim(1)) +
                       " but weight expects " + std::to_string(w.dim(1)));
    co = w.dim(0);
    const auto oh = conv_output_extent(h, spec.kernel_h, spec, "height");
    const auto ow = conv_output_extent(wd, spec.kernel_w, spec, "width");
    out = correlate(x, w, make_geometry(x.dim(1), h, wd, oh, ow, spec));
  } else {
    if (w.dim(0) != x.dim(1))
      throw ShapeError("conv2d (transpose): input channels (dimension 1) is " + std::to_string(x.dim(1)) +
                       " but weight expects " + std::to_string(w.dim(0)));
    co = w.dim(1);
    const auto oh = conv_output_extent(h, spec.kernel_h, spec, "height");
    const auto ow = conv_output_extent(wd, spec.kernel_w, spec, "width");
    // transpose conv is the adjoint of a regular conv from [co,oh,ow] to [ci,h,wd]
    ConvSpec fwd = spec;
    fwd.transpose = false;
    if (conv_output_extent(oh, spec.kernel_h, fwd, "height") != h ||
        conv_output_extent(ow, spec.kernel_w, fwd, "width") != wd)
      throw ShapeError("conv2d (transpose): output_padding inconsistent with stride");
    out = correlate_adjoint(x, w, make_geometry(co, oh, ow, h, wd, spec));
  }
  if (bias) {
    if (bias->size() != co)
      throw ShapeError("conv2d: bias length " + std::to_string(bias->size()) + " does not match output channels " +
                       std::to_string(co));
    const std::size_t plane = out.dim(2) * out.dim(3);
    for (std::size_t n = 0; n < out.dim(0); ++n)
      for (std::size_t c = 0; c < co; ++c) {
        T* p = out.raw() + (n * co + c) * plane;
        const T b = (*bias)[c];
        for (std::size_t i = 0; i < plane; ++i) p[i] += b;
      }
  }
  return out;
}

template <class T>
Tensor<T> conv2d_grad_input(const Tensor<T>& grad_out, const Tensor<T>& w, const ConvSpec& spec,
                            std::size_t in_h, std::size_t in_w) {
  check_rank4(grad_out.shape(), "conv2d cotangent");
  if (!spec.transpose) {
    if (grad_out.dim(1) != w.dim(0)) throw ShapeError("conv2d backward: cotangent dimension 1 does not match weight");
    return correlate_adjoint(grad_out, w, make_geometry(w.dim(1), in_h, in_w, grad_out.dim(2), grad_out.dim(3), spec));
  }
  if (grad_out.dim(1) != w.dim(1)) throw ShapeError("conv2d backward: cotangent dimension 1 does not match weight");
  return correlate(grad_out, w, make_geometry(w.dim(1), grad_out.dim(2), grad_out.dim(3), in_h, in_w, spec));
}

template <class T>
Tensor<T> conv2d_grad_weight(const Tensor<T>& x, const Tensor<T>& grad_out, const ConvSpec& spec,
                             const Shape& weight_shape) {
  check_rank4(x.shape(), "conv2d input");
  check_rank4(grad_out.shape(), "conv2d cotangent");
  if (!spec.transpose)
    return correlate_weight_grad(x, grad_out, make_geometry(x.dim(1), x.dim(2), x.dim(3), grad_out.dim(2), grad_out.dim(3), spec),
                                 weight_shape[0]);
  return correlate_weight_grad(grad_out, x,
                               make_geometry(grad_out.dim(1), grad_out.dim(2), grad_out.dim(3), x.dim(2), x.dim(3), spec),
                               weight_shape[0]);
}

template <class T>
Tensor<T> bias_grad(const Tensor<T>& grad_out) {
  const std::size_t n = grad_out.dim(0), c = grad_out.dim(1), plane = grad_out.dim(2) * grad_out.dim(3);
  Tensor<T> gb({c});
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t k = 0; k < c; ++k) {
      const T* p = grad_out.raw() + (s * c + k) * plane;
      T acc = 0;
      for (std::size_t i = 0; i < plane; ++i) acc += p[i];
      gb[k] += acc;
    }
  return gb;
}

template <class T>
Tensor<T> relu(const Tensor<T>& x, std::vector<std::uint8_t>* mask) {
  Tensor<T> out = x;
  T* o = out.raw();
  const std::size_t n = out.size();
  if (mask) {
    mask->resize(n);
    std::uint8_t* m = mask->data();
    for (std::size_t i = 0; i < n; ++i) m[i] = o[i] > T(0);
  }
  for (std::size_t i = 0; i < n; ++i) o[i] = o[i] > T(0) ? o[i] : T(0);
  return out;
}

template <class T>
Tensor<T> apply_mask(const Tensor<T>& x, const std::vector<std::uint8_t>& mask) {
  if (mask.empty() || x.size() % mask.size() != 0)
    throw ShapeError("apply_mask: mask length " + std::to_string(mask.size()) + " does not tile tensor " +
                     shape_string(x.shape()));
  Tensor<T> out = x;
  const std::size_t m = mask.size();
  for (std::size_t base = 0; base < out.size(); base += m) {
    T* o = out.raw() + base;
    for (std::size_t i = 0; i < m; ++i) o[i] = mask[i] ? o[i] : T(0);
  }
  return out;
}

template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  check_rank4(a.shape(), "concat");
  check_rank4(b.shape(), "concat");
  if (a.dim(0) != b.dim(0)) throw ShapeError("concat: batch dimension 0 differs");
  if (a.dim(2) != b.dim(2)) throw ShapeError("concat: spatial dimension 2 (height) differs");
  if (a.dim(3) != b.dim(3)) throw ShapeError("concat: spatial dimension 3 (width) differs");
  const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), plane = a.dim(2) * a.dim(3);
  Tensor<T> out({n, ca + cb, a.dim(2), a.dim(3)});
  for (std::size_t s = 0; s < n; ++s) {
    std::copy_n(a.raw() + s * ca * plane, ca * plane, out.raw() + s * (ca + cb) * plane);
    std::copy_n(b.raw() + s * cb * plane, cb * plane, out.raw() + (s * (ca + cb) + ca) * plane);
  }
  return out;
}

template <class T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& x, std::size_t ca) {
  check_rank4(x.shape(), "split_channels");
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (ca > c) throw ShapeError("split_channels: split point exceeds dimension 1");
  const std::size_t cb = c - ca;
  Tensor<T> a({n, ca, x.dim(2), x.dim(3)}), b({n, cb, x.dim(2), x.dim(3)});
  for (std::size_t s = 0; s < n; ++s) {
    std::copy_n(x.raw() + s * c * plane, ca * plane, a.raw() + s * ca * plane);
    std::copy_n(x.raw() + (s * c + ca) * plane, cb * plane, b.raw() + s * cb * plane);
  }
  return {std::move(a), std::move(b)};
}

template <class T>
Tensor<T> crop(const Tensor<T>& x, std::size_t height, std::size_t width) {
  check_rank4(x.shape(), "crop");
  if (height > x.dim(2) || width > x.dim(3)) throw ShapeError("crop: target larger than input");
  const std::size_t n = x.dim(0), c = x.dim(1);
  Tensor<T> out({n, c, height, width});
  for (std::size_t s = 0; s < n * c; ++s)
    for (std::size_t i = 0; i < height; ++i)
      std::copy_n(x.raw() + (s * x.dim(2) + i) * x.dim(3), width, out.raw() + (s * height + i) * width);
  return out;
}

// ---------------------------------------------------------------- norm

template <class T>
NormStats norm_batch_stats(const Tensor<T>& x, bool bias_free) {
  check_rank4(x.shape(), "norm");
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  const double count = double(n * plane);
  NormStats st;
  st.divisor.resize(c);
  if (!bias_free) st.mean.resize(c);
  for (std::size_t k = 0; k < c; ++k) {
    double s1 = 0, s2 = 0;
    for (std::size_t s = 0; s < n; ++s) {
      const T* p = x.raw() + (s * c + k) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        s1 += p[i];
        s2 += double(p[i]) * p[i];
      }
    }
    if (bias_free) {
      st.divisor[k] = std::sqrt(s2 / count + kNormEps);
    } else {
      const double mean = s1 / count;
      const double var = std::max(0.0, s2 / count - mean * mean);
      st.mean[k] = mean;
      st.divisor[k] = std::sqrt(var + kNormEps);
    }
    if (st.divisor[k] < kDegenerateRms)
      throw std::domain_error("normalization: degenerate channel " + std::to_string(k));
  }
  return st;
}

template <class T>
NormStats norm_running_stats(const NormLayer<T>& layer) {
  NormStats st;
  const std::size_t c = layer.channels();
  st.divisor.resize(c);
  if (layer.bias_free) {
    for (std::size_t k = 0; k < c; ++k) {
      st.divisor[k] = layer.running_rms[k];
      if (!(st.divisor[k] >= kDegenerateRms))
        throw std::domain_error("scale_norm: degenerate running RMS in channel " + std::to_string(k));
    }
  } else {
    st.mean.resize(c);
    for (std::size_t k = 0; k < c; ++k) {
      st.mean[k] = (*layer.running_mean)[k];
      st.divisor[k] = std::sqrt(double((*layer.running_var)[k]) + kNormEps);
    }
  }
  return st;
}

template <class T>
Tensor<T> norm_apply(const Tensor<T>& x, const NormLayer<T>& layer, const NormStats& st) {
  check_rank4(x.shape(), "norm");
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (c != layer.channels()) throw ShapeError("norm: channel dimension 1 does not match layer");
  Tensor<T> out(x.shape());
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t k = 0; k < c; ++k) {
      const T* p = x.raw() + (s * c + k) * plane;
      T* q = out.raw() + (s * c + k) * plane;
      const T scale = T(double(layer.gain[k]) / st.divisor[k]);
      if (layer.bias_free) {
        for (std::size_t i = 0; i < plane; ++i) q[i] = scale * p[i];
      } else {
        const T mean = T(st.mean[k]);
        const T shift = (*layer.shift)[k];
        for (std::size_t i = 0; i < plane; ++i) q[i] = scale * (p[i] - mean) + shift;
      }
    }
  return out;
}

template <class T>
void norm_update_running(NormLayer<T>& layer, const NormStats& batch, std::size_t batch_count) {
  const double keep = kNormMomentum, take = 1.0 - kNormMomentum;
  for (std::size_t k = 0; k < layer.channels(); ++k) {
    if (layer.bias_free) {
      layer.running_rms[k] = T(keep * layer.running_rms[k] + take * batch.divisor[k]);
    } else {
      const double var = batch.divisor[k] * batch.divisor[k] - kNormEps;
      const double unbiased = batch_count > 1 ? var * double(batch_count) / double(batch_count - 1) : var;
      (*layer.running_mean)[k] = T(keep * (*layer.running_mean)[k] + take * batch.mean[k]);
      (*layer.running_var)[k] = T(keep * (*layer.running_var)[k] + take * unbiased);
    }
  }
}

template <class T>
void norm_backward(const Tensor<T>& x, const Tensor<T>& grad_out, const NormLayer<T>& layer, const NormStats& st,
                   Mode mode, Tensor<T>* grad_x, Tensor<T>* grad_gain, Tensor<T>* grad_shift) {
  const std::size_t c = layer.channels();
  const std::size_t plane = grad_out.dim(2) * grad_out.dim(3);
  const std::size_t ng = grad_out.dim(0), nx = x.dim(0);
  if (mode == Mode::train && ng != nx)
    throw ShapeError("norm backward: train-mode statistics require matching batch dimension 0");
  if (grad_x) *grad_x = Tensor<T>(grad_out.shape());
  if (grad_gain) *grad_gain = Tensor<T>({c});
  if (grad_shift) *grad_shift = Tensor<T>({c});
  const double count = double(nx * plane);
  for (std::size_t k = 0; k < c; ++k) {
    const double r = st.divisor[k];
    const double g = layer.gain[k];
    const double mean = layer.bias_free ? 0.0 : st.mean[k];
    // sums over the batch of the normalized input against the cotangent
    double sum_gy = 0, sum_gy_xhat = 0;
    for (std::size_t s = 0; s < ng; ++s) {
      const T* gy = grad_out.raw() + (s * c + k) * plane;
      const T* xs = x.raw() + ((s % nx) * c + k) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        sum_gy += gy[i];
        sum_gy_xhat += double(gy[i]) * (double(xs[i]) - mean) / r;
      }
    }
    if (grad_gain) (*grad_gain)[k] = T(sum_gy_xhat);
    if (grad_shift) (*grad_shift)[k] = T(sum_gy);
    if (!grad_x) continue;
    for (std::size_t s = 0; s < ng; ++s) {
      const T* gy = grad_out.raw() + (s * c + k) * plane;
      const T* xs = x.raw() + ((s % nx) * c + k) * plane;
      T* gx = grad_x->raw() + (s * c + k) * plane;
      if (mode == Mode::infer) {
        for (std::size_t i = 0; i < plane; ++i) gx[i] = T(g / r * gy[i]);
      } else if (layer.bias_free) {
        // y = g x / r, r = sqrt(mean(x^2) + eps)
        const double proj = sum_gy_xhat / count;
        for (std::size_t i = 0; i < plane; ++i) gx[i] = T(g / r * (gy[i] - double(xs[i]) / r * proj));
      } else {
        const double mgy = sum_gy / count, mproj = sum_gy_xhat / count;
        for (std::size_t i = 0; i < plane; ++i) {
          const double xhat = (double(xs[i]) - mean) / r;
          gx[i] = T(g / r * (gy[i] - mgy - xhat * mproj));
        }
      }
    }
  }
}

template <class T>
Tensor<T> scale_norm(const Tensor<T>& x, NormLayer<T>& layer, Mode mode) {
  if (mode == Mode::infer) return norm_apply(x, layer, norm_running_stats(layer));
  const NormStats st = norm_batch_stats(x, layer.bias_free);
  norm_update_running(layer, st, x.dim(0) * x.dim(2) * x.dim(3));
  return norm_apply(x, layer, st);
}

#define BFDN_INSTANTIATE(T)                                                                                    \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*, const ConvSpec&);            \
  template Tensor<T> conv2d_grad_input(const Tensor<T>&, const Tensor<T>&, const ConvSpec&, std::size_t,       \
                                       std::size_t);                                                           \
  template Tensor<T> conv2d_grad_weight(const Tensor<T>&, const Tensor<T>&, const ConvSpec&, const Shape&);    \
  template Tensor<T> bias_grad(const Tensor<T>&);                                                              \
  template Tensor<T> relu(const Tensor<T>&, std::vector<std::uint8_t>*);                                       \
  template Tensor<T> apply_mask(const Tensor<T>&, const std::vector<std::uint8_t>&);                           \
  template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);                                      \
  template std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>&, std::size_t);                     \
  template Tensor<T> crop(const Tensor<T>&, std::size_t, std::size_t);                                         \
  template NormStats norm_batch_stats(const Tensor<T>&, bool);                                                 \
  template NormStats norm_running_stats(const NormLayer<T>&);                                                  \
  template Tensor<T> norm_apply(const Tensor<T>&, const NormLayer<T>&, const NormStats&);                      \
  template void norm_update_running(NormLayer<T>&, const NormStats&, std::size_t);                             \
  template void norm_backward(const Tensor<T>&, const Tensor<T>&, const NormLayer<T>&, const NormStats&, Mode, \
                              Tensor<T>*, Tensor<T>*, Tensor<T>*);                                             \
  template Tensor<T> scale_norm(const Tensor<T>&, NormLayer<T>&, Mode);

BFDN_INSTANTIATE(float)
BFDN_INSTANTIATE(double)
#undef BFDN_INSTANTIATE

}  // namespace ops

template <class T>
NormLayer<T> NormLayer<T>::make(std::size_t channels, bool bias_free) {
  NormLayer<T> l;
  l.bias_free = bias_free;
  l.gain = Tensor<T>({channels}, T(1));
  if (bias_free) {
    l.running_rms = Tensor<T>({channels}, T(1));
  } else {
    l.shift = Tensor<T>({channels}, T(0));
    l.running_mean = Tensor<T>({channels}, T(0));
    l.running_var = Tensor<T>({channels}, T(1));
  }
  return l;
}

template struct NormLayer<float>;
template struct NormLayer<double>;

}  // namespace bfdn
