#include "bfdn/model.hpp"

#include <cmath>
#include <stdexcept>

namespace bfdn {

std::string to_string(Arch arch) {
  switch (arch) {
    case Arch::dncnn: return "dncnn";
    case Arch::rcnn: return "rcnn";
    case Arch::unet: return "unet";
    case Arch::densenet: return "densenet";
  }
  return "?";
}

Arch arch_from_string(const std::string& name) {
  if (name == "dncnn") return Arch::dncnn;
  if (name == "rcnn") return Arch::rcnn;
  if (name == "unet") return Arch::unet;
  if (name == "densenet") return Arch::densenet;
  throw std::invalid_argument("unknown architecture '" + name + "'");
}

ModelConfig ModelConfig::full_scale(Arch arch) {
  ModelConfig c;
  c.arch = arch;
  c.channels = 64;
  c.depth = arch == Arch::dncnn ? 20 : 5;
  c.norm_enabled = arch == Arch::dncnn;
  c.recurrence_t_max = 4;
  c.dense_blocks = 4;
  return c;
}

ModelConfig ModelConfig::desk_scale(Arch arch) {
  ModelConfig c = full_scale(arch);
  c.channels = 32;
  if (arch == Arch::dncnn) c.depth = 8;
  return c;
}

void ModelConfig::validate() const {
  if (depth < 2) throw std::invalid_argument("model config: depth must be >= 2");
  if (channels < 1) throw std::invalid_argument("model config: channels must be >= 1");
  if (recurrence_t_max < 1) throw std::invalid_argument("model config: recurrence_t_max must be >= 1");
  if (dense_blocks < 1) throw std::invalid_argument("model config: dense_blocks must be >= 1");
  if (norm_enabled && arch != Arch::dncnn)
    throw std::invalid_argument("model config: normalization is only supported for dncnn, not " + to_string(arch));
  if (arch == Arch::unet && channels < 2) throw std::invalid_argument("model config: unet needs channels >= 2");
}

// ---------------------------------------------------------------- state views

template <class T>
std::vector<StateEntry<T>> Model<T>::parameters() {
  std::vector<StateEntry<T>> out;
  for (std::size_t i = 0; i < convs.size(); ++i) {
    auto& cv = convs[i];
    out.push_back({cv.name + ".weight", &cv.weight, true});
    if (cv.bias) out.push_back({cv.name + ".bias", &*cv.bias, true});
    if (norm_of_conv[i] >= 0) {
      auto& nl = norms[norm_of_conv[i]];
      out.push_back({cv.name + ".norm.gain", &nl.gain, true});
      if (nl.shift) out.push_back({cv.name + ".norm.shift", &*nl.shift, true});
    }
  }
  return out;
}

template <class T>
std::vector<StateEntry<T>> Model<T>::state() {
  std::vector<StateEntry<T>> out;
  for (std::size_t i = 0; i < convs.size(); ++i) {
    auto& cv = convs[i];
    out.push_back({cv.name + ".weight", &cv.weight, true});
    if (cv.bias) out.push_back({cv.name + ".bias", &*cv.bias, true});
    if (norm_of_conv[i] >= 0) {
      auto& nl = norms[norm_of_conv[i]];
      out.push_back({cv.name + ".norm.gain", &nl.gain, true});
      if (nl.shift) out.push_back({cv.name + ".norm.shift", &*nl.shift, true});
      if (nl.bias_free) {
        out.push_back({cv.name + ".norm.running_rms", &nl.running_rms, false});
      } else {
        out.push_back({cv.name + ".norm.running_mean", &*nl.running_mean, false});
        out.push_back({cv.name + ".norm.running_var", &*nl.running_var, false});
      }
    }
  }
  return out;
}

namespace {
template <class T>
std::vector<ConstStateEntry<T>> as_const(std::vector<StateEntry<T>> v) {
  std::vector<ConstStateEntry<T>> out;
  out.reserve(v.size());
  for (auto& e : v) out.push_back({std::move(e.name), e.tensor, e.trainable});
  return out;
}
}  // namespace

template <class T>
std::size_t Model<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : parameters()) n += e.tensor->size();
  return n;
}

template <class T>
std::size_t Model<T>::additive_parameter_count() const {
  std::size_t n = 0;
  for (const auto& cv : convs)
    if (cv.bias) n += cv.bias->size();
  for (const auto& nl : norms) {
    if (nl.shift) n += nl.shift->size();
    if (nl.running_mean) n += nl.running_mean->size();
  }
  return n;
}

template <class T>
std::size_t Model<T>::min_extent() const {
  return config.arch == Arch::unet ? 2 : 1;
}

template <class T>
template <class U>
Model<U> Model<T>::cast() const {
  Model<U> m;
  m.config = config;
  m.norm_of_conv = norm_of_conv;
  for (const auto& cv : convs) {
    ConvLayer<U> c{cv.name, cv.spec, cv.weight.template cast<U>(), std::nullopt};
    if (cv.bias) c.bias = cv.bias->template cast<U>();
    m.convs.push_back(std::move(c));
  }
  for (const auto& nl : norms) {
    NormLayer<U> n;
    n.bias_free = nl.bias_free;
    n.gain = nl.gain.template cast<U>();
    if (nl.shift) n.shift = nl.shift->template cast<U>();
    n.running_rms = nl.running_rms.template cast<U>();
    if (nl.running_mean) n.running_mean = nl.running_mean->template cast<U>();
    if (nl.running_var) n.running_var = nl.running_var->template cast<U>();
    m.norms.push_back(std::move(n));
  }
  return m;
}

// ---------------------------------------------------------------- build

namespace {

template <class T>
struct Builder {
  Model<T>& m;
  Rng& rng;

  void conv(std::string name, std::size_t in, std::size_t out, ConvSpec spec, bool bias, bool norm = false) {
    const std::size_t kh = spec.kernel_h, kw = spec.kernel_w;
    Shape ws = spec.transpose ? Shape{in, out, kh, kw} : Shape{out, in, kh, kw};
    // He fan-in scaling; a transpose conv output sees in*kh*kw/stride^2 taps
    double fan_in = double(in * kh * kw);
    if (spec.transpose) fan_in /= double(spec.stride * spec.stride);
    const double std = std::sqrt(2.0 / fan_in);
    Tensor<T> w(ws);
    for (auto& v : w.data()) v = T(std * rng.normal());
    ConvLayer<T> layer{std::move(name), spec, std::move(w), std::nullopt};
    if (bias) layer.bias = Tensor<T>({out}, T(0));
    m.convs.push_back(std::move(layer));
    if (norm) {
      m.norm_of_conv.push_back(int(m.norms.size()));
      m.norms.push_back(NormLayer<T>::make(out, !m.config.bias_enabled));
    } else {
      m.norm_of_conv.push_back(-1);
    }
  }
};

}  // namespace

template <class T>
Model<T> build(const ModelConfig& config, Rng& rng) {
  config.validate();
  Model<T> m;
  m.config = config;
  Builder<T> b{m, rng};
  const std::size_t c = std::size_t(config.channels);
  const bool bias = config.bias_enabled;
  const ConvSpec k3 = ConvSpec::same(3);

  switch (config.arch) {
    case Arch::dncnn: {
      const int depth = config.depth;
      b.conv("conv1", 1, c, k3, bias);
      for (int i = 2; i < depth; ++i) {
        const bool norm = config.norm_enabled;
        // a normalized layer gets its additive term from the norm shift
        b.conv("conv" + std::to_string(i), c, c, k3, bias && !norm, norm);
      }
      b.conv("conv" + std::to_string(depth), c, 1, k3, bias);
      break;
    }
    case Arch::rcnn: {
      b.conv("conv1", 2, c, k3, bias);
      for (int i = 2; i <= 4; ++i) b.conv("conv" + std::to_string(i), c, c, k3, bias);
      b.conv("conv5", c, 1, k3, false);
      break;
    }
    case Arch::unet: {
      const std::size_t half = c / 2;
      ConvSpec down = ConvSpec::same(3);
      down.stride = 2;
      ConvSpec up;
      up.kernel_h = up.kernel_w = 4;
      up.stride = 2;
      up.padding = 1;
      up.transpose = true;
      b.conv("conv1", 1, half, ConvSpec::same(5), bias);
      b.conv("conv2", half, half, k3, bias);
      b.conv("conv3", half, c, down, bias);
      b.conv("conv4", c, c, k3, bias);
      b.conv("conv5", c, c, ConvSpec::same(3, 2), bias);
      b.conv("conv6", c, c, ConvSpec::same(3, 4), bias);
      b.conv("conv7", c, c, up, bias);
      b.conv("conv8", c + half, half, k3, bias);
      b.conv("conv9", half, 1, ConvSpec::same(5), false);
      break;
    }
    case Arch::densenet: {
      const int blocks = config.dense_blocks;
      for (int blk = 1; blk <= blocks; ++blk) {
        const bool last_block = blk == blocks;
        const std::size_t in = blk == 1 ? 1 : c + 1;
        const std::string p = "block" + std::to_string(blk) + ".conv";
        b.conv(p + "1", in, c, k3, bias);
        for (int i = 2; i <= 4; ++i) b.conv(p + std::to_string(i), c, c, k3, bias);
        b.conv(p + "5", c, last_block ? 1 : c, k3, bias && !last_block);
      }
      break;
    }
  }
  return m;
}

// ---------------------------------------------------------------- forward

namespace {

template <class T>
struct Runner {
  const Model<T>& m;
  Tape<T>& tape;
  const ForwardOptions& opt;
  std::vector<NormStats>* stats;
  std::vector<int> w_slot, b_slot, g_slot, s_slot;
  std::size_t site = 0;

  Runner(const Model<T>& model, Tape<T>& t, const ForwardOptions& o, std::vector<NormStats>* s)
      : m(model), tape(t), opt(o), stats(s) {
    int slot = 0;
    for (std::size_t i = 0; i < m.convs.size(); ++i) {
      w_slot.push_back(slot++);
      b_slot.push_back(m.convs[i].bias ? slot++ : -1);
      const int ni = m.norm_of_conv[i];
      g_slot.push_back(ni >= 0 ? slot++ : -1);
      s_slot.push_back(ni >= 0 && m.norms[ni].shift ? slot++ : -1);
    }
  }

  Var conv(std::size_t i, Var x) {
    const auto& cv = m.convs[i];
    Var w = tape.param(cv.weight, w_slot[i]);
    std::optional<Var> b;
    if (cv.bias) b = tape.param(*cv.bias, b_slot[i]);
    Var out = tape.conv2d(x, w, b, cv.spec);
    const int ni = m.norm_of_conv[i];
    if (ni >= 0) {
      const auto& nl = m.norms[ni];
      Var g = tape.param(nl.gain, g_slot[i]);
      std::optional<Var> s;
      if (nl.shift) s = tape.param(*nl.shift, s_slot[i]);
      NormStats bs;
      out = tape.norm(out, nl, g, s, opt.mode, &bs);
      if (stats && opt.mode == Mode::train) stats->push_back(std::move(bs));
    }
    return out;
  }

  Var act(Var x) {
    if (!opt.frozen) return tape.relu(x);
    if (site >= opt.frozen->sites())
      throw std::invalid_argument("frozen forward: mask record has only " + std::to_string(opt.frozen->sites()) +
                                  " sites");
    return tape.masked(x, opt.frozen->masks[site++]);
  }

  Var conv_relu(std::size_t i, Var x) { return act(conv(i, x)); }
};

template <class T>
void check_input(const Model<T>& m, const Tensor<T>& y) {
  if (y.rank() != 4 || y.dim(1) != 1)
    throw ShapeError("forward: expected input [N,1,H,W], got " + shape_string(y.shape()));
  const std::size_t h = y.dim(2), w = y.dim(3), lo = m.min_extent();
  if (h < lo || w < lo)
    throw ShapeError("forward: spatial extent " + std::to_string(h) + "x" + std::to_string(w) + " is below the " +
                     to_string(m.config.arch) + " minimum of " + std::to_string(lo));
  if (m.config.arch == Arch::unet && (h % 2 || w % 2))
    throw ShapeError("forward: unet needs even height and width; crop with fit_input first (got " +
                     std::to_string(h) + "x" + std::to_string(w) + ")");
}

}  // namespace

template <class T>
Var forward(const Model<T>& model, Tape<T>& tape, Var y, const ForwardOptions& options,
            std::vector<NormStats>* batch_stats) {
  check_input(model, tape.value(y));
  Runner<T> r(model, tape, options, batch_stats);
  const auto& cfg = model.config;
  switch (cfg.arch) {
    case Arch::dncnn: {
      const std::size_t last = model.convs.size() - 1;
      Var h = y;
      for (std::size_t i = 0; i < last; ++i) h = r.conv_relu(i, h);
      return tape.add(y, r.conv(last, h));
    }
    case Arch::rcnn: {
      const int steps = options.steps > 0 ? options.steps : cfg.recurrence_t_max;
      if (options.steps < 0) throw std::invalid_argument("rcnn: recurrence steps must be >= 1");
      Var est = y;
      for (int t = 0; t < steps; ++t) {
        Var h = tape.concat(est, y);
        for (std::size_t i = 0; i < 4; ++i) h = r.conv_relu(i, h);
        est = r.conv(4, h);
      }
      return est;
    }
    case Arch::unet: {
      Var c1 = r.conv_relu(0, y);
      Var c2 = r.conv_relu(1, c1);
      Var h = c2;
      for (std::size_t i = 2; i <= 6; ++i) h = r.conv_relu(i, h);
      h = r.conv_relu(7, tape.concat(h, c2));
      return r.conv(8, h);
    }
    case Arch::densenet: {
      const std::size_t blocks = std::size_t(cfg.dense_blocks);
      Var in = y;
      Var out{};
      for (std::size_t blk = 0; blk < blocks; ++blk) {
        Var h = in;
        for (std::size_t i = 0; i < 5; ++i) {
          const std::size_t idx = blk * 5 + i;
          h = (blk + 1 == blocks && i == 4) ? r.conv(idx, h) : r.conv_relu(idx, h);
        }
        out = h;
        in = tape.concat(h, y);
      }
      return out;
    }
  }
  throw std::logic_error("unreachable");
}

template <class T>
Tensor<T> forward(const Model<T>& model, const Tensor<T>& y, const ForwardOptions& options) {
  Tape<T> tape;
  Var in = tape.input(y, false);
  return tape.value(forward(model, tape, in, options));
}

template <class T>
Tensor<T> forward_recurrent(const Model<T>& model, const Tensor<T>& y, int steps) {
  if (model.config.arch != Arch::rcnn)
    throw std::invalid_argument("forward_recurrent: model architecture is " + to_string(model.config.arch) +
                                ", not rcnn");
  if (steps < 1) throw std::invalid_argument("forward_recurrent: T must be >= 1");
  ForwardOptions o;
  o.steps = steps;
  return forward(model, y, o);
}

template <class T>
Tensor<T> forward_frozen(const Model<T>& model, const Tensor<T>& y, const ReluMaskRecord& masks, int steps) {
  ForwardOptions o;
  o.frozen = &masks;
  o.steps = steps;
  return forward(model, y, o);
}

template <class T>
ReluMaskRecord relu_masks(const Model<T>& model, const Tensor<T>& y, int steps) {
  Tape<T> tape;
  ForwardOptions o;
  o.steps = steps;
  Var in = tape.input(y, false);
  forward(model, tape, in, o);
  return tape.mask_record();
}

template <class T>
Tensor<T> fit_input(const Model<T>& model, const Tensor<T>& y) {
  if (model.config.arch != Arch::unet) return y;
  const std::size_t h = y.dim(2) - y.dim(2) % 2, w = y.dim(3) - y.dim(3) % 2;
  if (h == y.dim(2) && w == y.dim(3)) return y;
  return ops::crop(y, h, w);
}

template <class T>
void update_running_stats(Model<T>& model, const std::vector<NormStats>& batch_stats, std::size_t count) {
  if (batch_stats.size() != model.norms.size())
    throw std::invalid_argument("update_running_stats: expected " + std::to_string(model.norms.size()) +
                                " norm statistics, got " + std::to_string(batch_stats.size()));
  for (std::size_t i = 0; i < model.norms.size(); ++i) ops::norm_update_running(model.norms[i], batch_stats[i], count);
}

template <class T>
std::vector<ConstStateEntry<T>> Model<T>::parameters() const {
  return as_const(const_cast<Model*>(this)->parameters());
}

template <class T>
std::vector<ConstStateEntry<T>> Model<T>::state() const {
  return as_const(const_cast<Model*>(this)->state());
}

#define BFDN_INSTANTIATE(T)                                                                                        \
  template class Model<T>;                                                                                         \
  template Model<T> build(const ModelConfig&, Rng&);                                                               \
  template Var forward(const Model<T>&, Tape<T>&, Var, const ForwardOptions&, std::vector<NormStats>*);            \
  template Tensor<T> forward(const Model<T>&, const Tensor<T>&, const ForwardOptions&);                            \
  template Tensor<T> forward_recurrent(const Model<T>&, const Tensor<T>&, int);                                    \
  template Tensor<T> forward_frozen(const Model<T>&, const Tensor<T>&, const ReluMaskRecord&, int);                \
  template ReluMaskRecord relu_masks(const Model<T>&, const Tensor<T>&, int);                                      \
  template Tensor<T> fit_input(const Model<T>&, const Tensor<T>&);                                                 \
  template void update_running_stats(Model<T>&, const std::vector<NormStats>&, std::size_t);

BFDN_INSTANTIATE(float)
BFDN_INSTANTIATE(double)
#undef BFDN_INSTANTIATE

template Model<double> Model<float>::cast<double>() const;
template Model<float> Model<double>::cast<float>() const;
template Model<float> Model<float>::cast<float>() const;
template Model<double> Model<double>::cast<double>() const;

}  // namespace bfdn
