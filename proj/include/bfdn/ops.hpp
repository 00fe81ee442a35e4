#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "bfdn/tensor.hpp"

namespace bfdn {

/// Geometry of a 2-D convolution. Cross-correlation convention (no kernel
/// flip), zero padding applied symmetrically.
struct ConvSpec {
  int kernel_h = 3;
  int kernel_w = 3;
  int stride = 1;
  int dilation = 1;
  int padding = 0;
  bool transpose = false;
  int output_padding = 0;  // transpose only

  /// "Same"-size layer: pad = floor(k/2) * dilation.
  static ConvSpec same(int kernel, int dilation = 1);
  bool operator==(const ConvSpec&) const = default;
};

/// Output extent along one axis; throws ShapeError when it would be < 1.
std::size_t conv_output_extent(std::size_t in, int kernel, const ConvSpec& spec, const char* axis);

namespace ops {

/// Process-wide worker cap. Results never depend on it: work is split over
/// independent outputs and every reduction runs in a fixed order.
void set_max_threads(int n);
int max_threads();
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

/// x: [N,Cin,H,W]. Regular conv w: [Cout,Cin,kh,kw]; transpose conv
/// w: [Cin,Cout,kh,kw]. bias: [Cout] or null.
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias, const ConvSpec& spec);

/// Adjoint of conv2d with respect to x, evaluated on an output cotangent.
/// The batch extent of `grad_out` may differ from the forward batch.
template <class T>
Tensor<T> conv2d_grad_input(const Tensor<T>& grad_out, const Tensor<T>& w, const ConvSpec& spec,
                            std::size_t in_h, std::size_t in_w);

template <class T>
Tensor<T> conv2d_grad_weight(const Tensor<T>& x, const Tensor<T>& grad_out, const ConvSpec& spec,
                             const Shape& weight_shape);

template <class T>
Tensor<T> bias_grad(const Tensor<T>& grad_out);

/// out = max(x, 0); mask(i) = 1 iff x(i) > 0.
template <class T>
Tensor<T> relu(const Tensor<T>& x, std::vector<std::uint8_t>* mask = nullptr);

/// Multiply by a recorded mask. The mask covers one sample and is
/// broadcast over the batch when its length is size()/N.
template <class T>
Tensor<T> apply_mask(const Tensor<T>& x, const std::vector<std::uint8_t>& mask);

template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

/// Split [N,Ca+Cb,H,W] into its first `channels_a` channels and the rest.
template <class T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& x, std::size_t channels_a);

/// Crop the trailing rows/columns of an NCHW tensor.
template <class T>
Tensor<T> crop(const Tensor<T>& x, std::size_t height, std::size_t width);

}  // namespace ops
}  // namespace bfdn
