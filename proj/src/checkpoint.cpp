#include "bfdn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "bfdn/config.hpp"

namespace bfdn {

using nlohmann::json;

namespace {

constexpr char kMagic[5] = {'B', 'F', 'D', 'N', '1'};
constexpr char kAdamTag[4] = {'A', 'D', 'A', 'M'};

template <class U>
void put_le(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(std::uint8_t((v >> (8 * i)) & 0xff));
}

void put_floats(std::vector<std::uint8_t>& out, const Tensor<float>& t) {
  for (float f : t.data()) put_le(out, std::bit_cast<std::uint32_t>(f));
}

class Cursor {
 public:
  explicit Cursor(const std::vector<std::uint8_t>& b) : b_(b) {}
  std::size_t remaining() const { return b_.size() - pos_; }

  template <class U>
  U le(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= U(b_[pos_ + i]) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }
  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void floats(Tensor<float>& t, const std::string& layer) {
    if (remaining() < t.size() * 4)
      throw CheckpointError("checkpoint payload length mismatch in layer '" + layer + "': expected " +
                            std::to_string(t.size()) + " floats, " + std::to_string(remaining() / 4) + " available");
    for (auto& f : t.data()) f = std::bit_cast<float>(le<std::uint32_t>("payload"));
  }

 private:
  void need(std::size_t n, const char* what) const {
    if (remaining() < n) throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
  }
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
};

json layer_table(const Model<float>& model) {
  json layers = json::array();
  for (const auto& e : model.state())
    layers.push_back({{"name", e.name}, {"shape", e.tensor->shape()}, {"trainable", e.trainable}});
  return layers;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Model<float>& model, const AdamState* optimizer,
                                            const CheckpointMeta& meta) {
  json m = {
      {"format", "BFDN1"},
      {"model", to_json(model.config)},
      {"norm_placement", model.norms.empty() ? "none" : "intermediate layers 2..L-1"},
      {"training_step", meta.training_step},
      {"optimizer_state", optimizer != nullptr},
      {"rng", {{"algorithm", meta.rng_algorithm.empty() ? std::string(Rng::algorithm) : meta.rng_algorithm},
               {"seed", meta.seed}}},
      {"train_sigma_range",
       meta.train_sigma_range ? json::array({meta.train_sigma_range->first, meta.train_sigma_range->second})
                              : json(nullptr)},
      {"noise_distribution", meta.noise_distribution},
      {"layers", layer_table(model)},
  };
  const std::string text = m.dump();
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_le(out, std::uint32_t(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  std::uint64_t count = 0;
  for (const auto& e : model.state()) count += e.tensor->size();
  put_le(out, count);
  for (const auto& e : model.state()) put_floats(out, *e.tensor);
  if (optimizer) {
    const auto params = model.parameters();
    if (optimizer->m.size() != params.size() || optimizer->v.size() != params.size())
      throw CheckpointError("optimizer state has " + std::to_string(optimizer->m.size()) + " moments for " +
                            std::to_string(params.size()) + " parameters");
    out.insert(out.end(), std::begin(kAdamTag), std::end(kAdamTag));
    put_le(out, optimizer->step);
    for (std::size_t i = 0; i < params.size(); ++i) {
      require_same_shape(optimizer->m[i].shape(), params[i].tensor->shape(), "checkpoint optimizer moment");
      put_floats(out, optimizer->m[i]);
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      require_same_shape(optimizer->v[i].shape(), params[i].tensor->shape(), "checkpoint optimizer moment");
      put_floats(out, optimizer->v[i]);
    }
  }
  return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Cursor cur(bytes);
  if (cur.remaining() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    throw CheckpointError("not a BFDN1 checkpoint: bad magic/version");
  cur.bytes(sizeof kMagic, "magic");
  const auto meta_len = cur.le<std::uint32_t>("metadata length");
  json m;
  try {
    m = json::parse(cur.bytes(meta_len, "metadata"));
  } catch (const json::parse_error& e) {
    throw CheckpointError(std::string("checkpoint metadata is not valid JSON: ") + e.what());
  }

  Checkpoint ck;
  try {
    Rng rng(0);
    ck.model = build<float>(model_config_from_json(m.at("model")), rng);
    ck.meta.training_step = m.at("training_step").get<std::uint64_t>();
    ck.meta.seed = m.at("rng").at("seed").get<std::uint64_t>();
    ck.meta.rng_algorithm = m.at("rng").at("algorithm").get<std::string>();
    if (!m.at("train_sigma_range").is_null())
      ck.meta.train_sigma_range = {m["train_sigma_range"].at(0).get<double>(), m["train_sigma_range"].at(1).get<double>()};
    ck.meta.noise_distribution = m.at("noise_distribution").get<std::string>();
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint metadata incomplete: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("checkpoint metadata invalid: ") + e.what());
  }

  auto state = ck.model.state();
  const json& layers = m.at("layers");
  if (layers != layer_table(ck.model))
    throw CheckpointError("checkpoint layer table does not match the model built from its config");
  std::uint64_t expected = 0;
  for (const auto& e : state) expected += e.tensor->size();
  const auto count = cur.le<std::uint64_t>("payload length");
  if (count != expected)
    throw CheckpointError("checkpoint config/payload length mismatch: config implies " + std::to_string(expected) +
                          " floats, header declares " + std::to_string(count));
  for (auto& e : state) cur.floats(*e.tensor, e.name);

  const bool has_opt = m.value("optimizer_state", false);
  if (has_opt) {
    if (cur.bytes(sizeof kAdamTag, "optimizer tag") != std::string(kAdamTag, sizeof kAdamTag))
      throw CheckpointError("checkpoint optimizer section has a bad tag");
    AdamState opt;
    opt.step = cur.le<std::uint64_t>("optimizer step");
    const auto params = ck.model.parameters();
    for (const auto& p : params) {
      opt.m.emplace_back(p.tensor->shape());
      cur.floats(opt.m.back(), p.name + " (adam m)");
    }
    for (const auto& p : params) {
      opt.v.emplace_back(p.tensor->shape());
      cur.floats(opt.v.back(), p.name + " (adam v)");
    }
    ck.optimizer = std::move(opt);
  }
  if (cur.remaining() != 0)
    throw CheckpointError("checkpoint length mismatch: " + std::to_string(cur.remaining()) + " trailing bytes");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Model<float>& model, const AdamState* optimizer,
                     const CheckpointMeta& meta) {
  const auto bytes = encode_checkpoint(model, optimizer, meta);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace bfdn
