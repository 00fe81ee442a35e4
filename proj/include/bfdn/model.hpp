#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bfdn/norm.hpp"
#include "bfdn/ops.hpp"
#include "bfdn/rng.hpp"
#include "bfdn/tape.hpp"
#include "bfdn/tensor.hpp"

namespace bfdn {

enum class Arch { dncnn, rcnn, unet, densenet };

std::string to_string(Arch arch);
Arch arch_from_string(const std::string& name);

struct ModelConfig {
  Arch arch = Arch::dncnn;
  int depth = 8;          // dncnn conv layers; rcnn body and densenet block depth are fixed at 5
  int channels = 32;      // intermediate channels (unet uses channels/2 at full resolution)
  bool bias_enabled = true;
  bool norm_enabled = true;  // dncnn only
  int recurrence_t_max = 4;  // rcnn
  int dense_blocks = 4;      // densenet
  std::uint64_t seed = 0;

  /// Full-scale configuration of the reference architectures.
  static ModelConfig full_scale(Arch arch);
  /// Desk-scale configuration used by default (dncnn depth 8, 32 channels).
  static ModelConfig desk_scale(Arch arch);

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

template <class T>
struct ConvLayer {
  std::string name;
  ConvSpec spec;
  Tensor<T> weight;
  std::optional<Tensor<T>> bias;
};

/// Named view of one stored tensor, in declared layer order.
template <class TensorPtr>
struct BasicStateEntry {
  std::string name;
  TensorPtr tensor;
  bool trainable;
};
template <class T>
using StateEntry = BasicStateEntry<Tensor<T>*>;
template <class T>
using ConstStateEntry = BasicStateEntry<const Tensor<T>*>;

/// Options for a forward pass.
struct ForwardOptions {
  Mode mode = Mode::infer;
  /// When set, every ReLU site multiplies by the recorded mask instead of
  /// thresholding (the frozen-mask network).
  const ReluMaskRecord* frozen = nullptr;
  /// Recurrence length for rcnn; 0 means config.recurrence_t_max.
  int steps = 0;
};

template <class T>
class Model {
 public:
  ModelConfig config;
  std::vector<ConvLayer<T>> convs;
  std::vector<NormLayer<T>> norms;
  /// Index into `norms` for each conv, -1 when the conv is not normalized.
  std::vector<int> norm_of_conv;

  /// Trainable tensors in declared order; slot i of a Tape refers to entry i.
  std::vector<StateEntry<T>> parameters();
  std::vector<ConstStateEntry<T>> parameters() const;
  /// Trainable tensors and running statistics in declared order.
  std::vector<StateEntry<T>> state();
  std::vector<ConstStateEntry<T>> state() const;

  std::size_t parameter_count() const;
  std::size_t additive_parameter_count() const;

  template <class U>
  Model<U> cast() const;

  /// Smallest spatial extent the architecture accepts.
  std::size_t min_extent() const;
};

template <class T>
Model<T> build(const ModelConfig& config, Rng& rng);

/// Records the forward pass of `model` on `tape` and returns the output.
/// In train mode the batch statistics of each norm layer are appended to
/// `batch_stats` (one entry per norm layer, in order).
template <class T>
Var forward(const Model<T>& model, Tape<T>& tape, Var y, const ForwardOptions& options,
            std::vector<NormStats>* batch_stats = nullptr);

/// Infer-mode forward pass on a [N,1,H,W] batch.
template <class T>
Tensor<T> forward(const Model<T>& model, const Tensor<T>& y, const ForwardOptions& options = {});

template <class T>
Tensor<T> forward_recurrent(const Model<T>& model, const Tensor<T>& y, int steps);

/// Frozen-mask network: the affine map realized by fixing the ReLU pattern.
template <class T>
Tensor<T> forward_frozen(const Model<T>& model, const Tensor<T>& y, const ReluMaskRecord& masks, int steps = 0);

/// Mask record of an infer-mode pass at y (single sample).
template <class T>
ReluMaskRecord relu_masks(const Model<T>& model, const Tensor<T>& y, int steps = 0);

/// Apply the unet crop rule (drop a trailing odd row/column); identity for
/// other architectures.
template <class T>
Tensor<T> fit_input(const Model<T>& model, const Tensor<T>& y);

/// Fold train-mode batch statistics into the running state.
template <class T>
void update_running_stats(Model<T>& model, const std::vector<NormStats>& batch_stats, std::size_t count);

}  // namespace bfdn
