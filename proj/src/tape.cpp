#include "bfdn/tape.hpp"

#include <stdexcept>

namespace bfdn {

template <class T>
Var Tape<T>::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{int(nodes_.size()) - 1};
}

template <class T>
Var Tape<T>::input(Tensor<T> x, bool requires_grad) {
  Node n;
  n.kind = Kind::input;
  n.value = std::move(x);
  n.requires_grad = requires_grad;
  Var v = push(std::move(n));
  input_ids_.push_back(v.id);
  return v;
}

template <class T>
Var Tape<T>::param(const Tensor<T>& value, int slot) {
  if (slot < 0) throw std::invalid_argument("Tape::param: negative slot");
  Node n;
  n.kind = Kind::param;
  n.value = value;
  n.slot = slot;
  param_slots_ = std::max(param_slots_, std::size_t(slot) + 1);
  return push(std::move(n));
}

template <class T>
Var Tape<T>::conv2d(Var x, Var w, std::optional<Var> bias, const ConvSpec& spec) {
  const Tensor<T>* b = bias ? &value(*bias) : nullptr;
  Node n;
  n.kind = Kind::conv;
  n.value = ops::conv2d(value(x), value(w), b, spec);
  n.a = x.id;
  n.b = w.id;
  n.c = bias ? bias->id : -1;
  n.spec = spec;
  return push(std::move(n));
}

template <class T>
Var Tape<T>::relu(Var x) {
  Node n;
  n.kind = Kind::relu;
  n.value = ops::relu(value(x), &n.mask);
  n.a = x.id;
  return push(std::move(n));
}

template <class T>
Var Tape<T>::masked(Var x, const std::vector<std::uint8_t>& mask) {
  Node n;
  n.kind = Kind::masked;
  n.value = ops::apply_mask(value(x), mask);
  n.mask = mask;
  n.a = x.id;
  return push(std::move(n));
}

template <class T>
Var Tape<T>::norm(Var x, const NormLayer<T>& layer, Var gain, std::optional<Var> shift, Mode mode,
                  NormStats* batch_stats) {
  if (layer.bias_free == shift.has_value())
    throw std::invalid_argument("Tape::norm: shift must be given exactly for the biased variant");
  Node n;
  n.kind = Kind::norm;
  n.layer = layer;
  // parameters come from the tape so gradients reach their slots
  n.layer.gain = value(gain);
  if (shift) n.layer.shift = value(*shift);
  n.mode = mode;
  n.stats = mode == Mode::train ? ops::norm_batch_stats(value(x), layer.bias_free) : ops::norm_running_stats(layer);
  n.value = ops::norm_apply(value(x), n.layer, n.stats);
  if (batch_stats && mode == Mode::train) *batch_stats = n.stats;
  n.a = x.id;
  n.b = gain.id;
  n.c = shift ? shift->id : -1;
  return push(std::move(n));
}

template <class T>
Var Tape<T>::concat(Var a, Var b) {
  Node n;
  n.kind = Kind::concat;
  n.value = ops::concat_channels(value(a), value(b));
  n.a = a.id;
  n.b = b.id;
  return push(std::move(n));
}

template <class T>
Var Tape<T>::add(Var a, Var b) {
  Node n;
  n.kind = Kind::add;
  n.value = value(a) + value(b);
  n.a = a.id;
  n.b = b.id;
  return push(std::move(n));
}

template <class T>
ReluMaskRecord Tape<T>::mask_record() const {
  ReluMaskRecord r;
  for (const auto& n : nodes_) {
    if (n.kind == Kind::relu || n.kind == Kind::masked) {
      r.masks.push_back(n.mask);
      r.shapes.push_back(n.value.shape());
    }
  }
  return r;
}

namespace {

template <class T>
void accumulate(std::optional<Tensor<T>>& slot, Tensor<T> g) {
  if (!slot) {
    slot = std::move(g);
    return;
  }
  require_same_shape(slot->shape(), g.shape(), "gradient accumulation");
  for (std::size_t i = 0; i < g.size(); ++i) (*slot)[i] += g[i];
}

}  // namespace

template <class T>
std::vector<std::optional<Tensor<T>>> Tape<T>::sweep(Var out, const Tensor<T>& cotangent, bool with_params,
                                                     bool allow_broadcast) const {
  if (out.id < 0 || std::size_t(out.id) >= nodes_.size()) throw std::out_of_range("Tape: invalid output handle");
  const Node& top = nodes_[out.id];
  if (allow_broadcast) {
    Shape s = cotangent.shape();
    if (s.empty()) throw ShapeError("cotangent must have a batch dimension");
    s[0] = top.value.dim(0);
    require_same_shape(s, top.value.shape(), "cotangent");
  } else {
    require_same_shape(cotangent.shape(), top.value.shape(), "cotangent");
  }

  // which nodes lie on a path from a leaf that wants a gradient
  std::vector<char> needs(out.id + 1, 0);
  for (int i = 0; i <= out.id; ++i) {
    const Node& n = nodes_[i];
    if (n.kind == Kind::input) needs[i] = n.requires_grad;
    else if (n.kind == Kind::param) needs[i] = with_params;
    else needs[i] = (n.a >= 0 && needs[n.a]) || (n.b >= 0 && needs[n.b]) || (n.c >= 0 && needs[n.c]);
  }

  std::vector<std::optional<Tensor<T>>> grads(out.id + 1);
  grads[out.id] = cotangent;
  for (int i = out.id; i >= 0; --i) {
    if (!grads[i] || !needs[i]) continue;
    const Node& n = nodes_[i];
    const Tensor<T>& g = *grads[i];
    switch (n.kind) {
      case Kind::input:
      case Kind::param:
        break;
      case Kind::conv: {
        const Tensor<T>& x = nodes_[n.a].value;
        const Tensor<T>& w = nodes_[n.b].value;
        if (needs[n.a]) accumulate(grads[n.a], ops::conv2d_grad_input(g, w, n.spec, x.dim(2), x.dim(3)));
        if (needs[n.b]) accumulate(grads[n.b], ops::conv2d_grad_weight(x, g, n.spec, w.shape()));
        if (n.c >= 0 && needs[n.c]) accumulate(grads[n.c], ops::bias_grad(g));
        break;
      }
      case Kind::relu:
      case Kind::masked:
        if (needs[n.a]) accumulate(grads[n.a], ops::apply_mask(g, n.mask));
        break;
      case Kind::norm: {
        Tensor<T> gx, gg, gs;
        ops::norm_backward(nodes_[n.a].value, g, n.layer, n.stats, n.mode, needs[n.a] ? &gx : nullptr,
                           needs[n.b] ? &gg : nullptr, (n.c >= 0 && needs[n.c]) ? &gs : nullptr);
        if (needs[n.a]) accumulate(grads[n.a], std::move(gx));
        if (needs[n.b]) accumulate(grads[n.b], std::move(gg));
        if (n.c >= 0 && needs[n.c]) accumulate(grads[n.c], std::move(gs));
        break;
      }
      case Kind::concat: {
        auto [ga, gb] = ops::split_channels(g, nodes_[n.a].value.dim(1));
        if (needs[n.a]) accumulate(grads[n.a], std::move(ga));
        if (needs[n.b]) accumulate(grads[n.b], std::move(gb));
        break;
      }
      case Kind::add:
        if (needs[n.a]) accumulate(grads[n.a], g);
        if (needs[n.b]) accumulate(grads[n.b], g);
        break;
    }
  }
  return grads;
}

template <class T>
typename Tape<T>::Gradients Tape<T>::backward(Var out, const Tensor<T>& cotangent, bool with_params) const {
  auto grads = sweep(out, cotangent, with_params, false);
  Gradients result;
  for (int id : input_ids_) {
    if (id <= out.id && grads[id]) result.inputs.push_back(std::move(*grads[id]));
    else result.inputs.emplace_back(nodes_[id].value.shape());
  }
  result.params.resize(param_slots_);
  if (with_params) {
    for (int i = 0; i <= out.id; ++i) {
      const Node& n = nodes_[i];
      if (n.kind != Kind::param || !grads[i]) continue;
      auto& dst = result.params[n.slot];
      if (dst.empty()) dst = std::move(*grads[i]);
      else
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += (*grads[i])[k];
    }
  }
  return result;
}

template <class T>
Tensor<T> Tape<T>::input_vjp(Var out, Var in, const Tensor<T>& cotangents) const {
  if (nodes_.at(in.id).kind != Kind::input) throw std::invalid_argument("input_vjp: handle is not an input");
  for (int i = 0; i <= out.id; ++i) {
    const Node& n = nodes_[i];
    if (n.kind == Kind::norm && n.mode == Mode::train)
      throw std::logic_error("input_vjp: train-mode normalization couples the batch");
  }
  if (nodes_[out.id].value.dim(0) != 1 && cotangents.dim(0) != nodes_[out.id].value.dim(0))
    throw ShapeError("input_vjp: batched cotangents need a single-sample tape");
  auto grads = sweep(out, cotangents, false, true);
  if (!grads[in.id]) {
    Shape s = nodes_[in.id].value.shape();
    s[0] = cotangents.dim(0);
    return Tensor<T>(s);
  }
  return std::move(*grads[in.id]);
}

template class Tape<float>;
template class Tape<double>;

}  // namespace bfdn
