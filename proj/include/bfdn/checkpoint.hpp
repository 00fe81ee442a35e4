#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "bfdn/model.hpp"

namespace bfdn {

/// Adam moment estimates, shaped like the model parameters.
struct AdamState {
  std::vector<Tensor<float>> m;
  std::vector<Tensor<float>> v;
  std::uint64_t step = 0;
};

/// Bookkeeping stored alongside the parameters.
struct CheckpointMeta {
  std::uint64_t training_step = 0;
  std::uint64_t seed = 0;
  std::string rng_algorithm;
  std::optional<std::pair<double, double>> train_sigma_range;
  std::string noise_distribution;
};

struct Checkpoint {
  Model<float> model;
  std::optional<AdamState> optimizer;
  CheckpointMeta meta;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// "BFDN1" container: magic, u32 metadata length, JSON metadata, u64 float
/// count, little-endian float32 payload in declared layer order, then an
/// optional "ADAM" section holding the step counter and both moments.
void save_checkpoint(const std::filesystem::path& path, const Model<float>& model,
                     const AdamState* optimizer = nullptr, const CheckpointMeta& meta = {});
std::vector<std::uint8_t> encode_checkpoint(const Model<float>& model, const AdamState* optimizer,
                                            const CheckpointMeta& meta);

Checkpoint load_checkpoint(const std::filesystem::path& path);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

}  // namespace bfdn
