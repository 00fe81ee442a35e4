#pragma once

#include <optional>
#include <vector>

#include "bfdn/tensor.hpp"

namespace bfdn {

enum class Mode { train, infer };

/// Per-channel normalization layer state.
///
/// Bias-free variant (scale-only): out = gain * x / rms, no mean and no
/// shift. The biased variant is standard batch normalization with a learned
/// shift. Running statistics follow an exponential moving average.
template <class T>
struct NormLayer {
  bool bias_free = true;
  Tensor<T> gain;                          // [C]
  std::optional<Tensor<T>> shift;          // [C], biased only
  Tensor<T> running_rms;                   // [C], bias-free only
  std::optional<Tensor<T>> running_mean;   // [C], biased only
  std::optional<Tensor<T>> running_var;    // [C], biased only

  static NormLayer make(std::size_t channels, bool bias_free);
  std::size_t channels() const { return gain.size(); }
};

inline constexpr double kNormEps = 1e-5;
inline constexpr double kNormMomentum = 0.9;  // running = 0.9 * running + 0.1 * batch
inline constexpr double kDegenerateRms = 1e-12;

/// Per-channel statistics used by one normalization application:
/// out = gain * (x - mean) / divisor (+ shift).
struct NormStats {
  std::vector<double> mean;     // empty for the bias-free variant
  std::vector<double> divisor;
};

namespace ops {

/// Batch statistics over (N,H,W). Bias-free: divisor = sqrt(mean(x^2) + eps).
/// Biased: mean and divisor = sqrt(var + eps).
template <class T>
NormStats norm_batch_stats(const Tensor<T>& x, bool bias_free);

/// Frozen statistics from the running state. Throws when a bias-free
/// running RMS is below kDegenerateRms.
template <class T>
NormStats norm_running_stats(const NormLayer<T>& layer);

template <class T>
Tensor<T> norm_apply(const Tensor<T>& x, const NormLayer<T>& layer, const NormStats& stats);

/// Fold batch statistics into the running state.
template <class T>
void norm_update_running(NormLayer<T>& layer, const NormStats& batch, std::size_t batch_count);

/// Gradients of norm_apply. In train mode the dependence of the batch
/// statistics on x is included.
template <class T>
void norm_backward(const Tensor<T>& x, const Tensor<T>& grad_out, const NormLayer<T>& layer,
                   const NormStats& stats, Mode mode, Tensor<T>* grad_x, Tensor<T>* grad_gain,
                   Tensor<T>* grad_shift);

/// One-call scale-only normalization (the bias-free variant): in train mode
/// the batch RMS is used and the running RMS is updated.
template <class T>
Tensor<T> scale_norm(const Tensor<T>& x, NormLayer<T>& layer, Mode mode);

}  // namespace ops
}  // namespace bfdn
