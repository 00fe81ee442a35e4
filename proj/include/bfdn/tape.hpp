#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "bfdn/norm.hpp"
#include "bfdn/ops.hpp"
#include "bfdn/tensor.hpp"

namespace bfdn {

/// One binary mask per ReLU site, in execution order. mask == 1 exactly
/// where the pre-activation was strictly positive.
struct ReluMaskRecord {
  std::vector<std::vector<std::uint8_t>> masks;
  std::vector<Shape> shapes;

  std::size_t sites() const { return masks.size(); }
  bool operator==(const ReluMaskRecord&) const = default;
};

/// Handle to a value recorded on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Records executed operations and replays them in reverse to produce
/// vector-Jacobian products. A tape is confined to one thread.
template <class T>
class Tape {
 public:
  struct Gradients {
    std::vector<Tensor<T>> inputs;  // one per input() leaf, creation order
    std::vector<Tensor<T>> params;  // indexed by parameter slot; empty when unused
  };

  Var input(Tensor<T> x, bool requires_grad = true);
  Var param(const Tensor<T>& value, int slot);

  Var conv2d(Var x, Var w, std::optional<Var> bias, const ConvSpec& spec);
  Var relu(Var x);
  /// ReLU replaced by multiplication with a fixed mask (frozen-mask network).
  Var masked(Var x, const std::vector<std::uint8_t>& mask);
  /// Normalization layer. Train mode uses batch statistics and, if
  /// `batch_stats` is given, reports them so running state can be updated.
  Var norm(Var x, const NormLayer<T>& layer, Var gain, std::optional<Var> shift, Mode mode,
           NormStats* batch_stats = nullptr);
  Var concat(Var a, Var b);
  Var add(Var a, Var b);

  const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
  std::size_t size() const { return nodes_.size(); }
  std::size_t param_slots() const { return param_slots_; }

  /// Masks of every relu()/masked() site in order.
  ReluMaskRecord mask_record() const;

  /// Reverse sweep from `out` with the given cotangent.
  Gradients backward(Var out, const Tensor<T>& cotangent, bool with_params = true) const;

  /// Batched input VJP for a tape recorded on a single sample: each of the B
  /// cotangents in [B,C,H,W] is pulled back to `in`. Requires every
  /// normalization on the path to be in infer mode.
  Tensor<T> input_vjp(Var out, Var in, const Tensor<T>& cotangents) const;

 private:
  enum class Kind { input, param, conv, relu, masked, norm, concat, add };
  struct Node {
    Kind kind = Kind::input;
    Tensor<T> value;
    int a = -1, b = -1, c = -1;
    bool requires_grad = false;
    int slot = -1;
    ConvSpec spec;
    std::vector<std::uint8_t> mask;
    NormLayer<T> layer;
    NormStats stats;
    Mode mode = Mode::infer;
  };

  Var push(Node node);
  std::vector<std::optional<Tensor<T>>> sweep(Var out, const Tensor<T>& cotangent, bool with_params,
                                              bool allow_broadcast) const;

  std::vector<Node> nodes_;
  std::vector<int> input_ids_;
  std::size_t param_slots_ = 0;
};

}  // namespace bfdn
