#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "bfdn/model.hpp"
#include "bfdn/training.hpp"

namespace bfdn {

inline constexpr const char* kConfigSchema = "bfdn-config/1";

struct AnalysisConfig {
  std::size_t patch_size = 40;
  std::vector<double> alphas{0, 0.25, 1, 2, 7.5};
  std::vector<double> sweep_sigmas{5, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100};
  std::vector<double> svd_sigmas{10, 25, 50, 75, 100};
  int filter_pixels = 10;
  bool operator==(const AnalysisConfig&) const = default;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  ModelConfig model = ModelConfig::desk_scale(Arch::dncnn);
  TrainConfig train;  // train.noise is the top-level "noise" object
  AnalysisConfig analysis;

  /// FNV-1a over the canonical JSON form.
  std::string checksum() const;
  bool operator==(const ExperimentConfig&) const = default;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Complete document with every default written out.
nlohmann::json to_json(const ExperimentConfig& c);
/// Strict parse: unknown keys and wrong types raise ConfigError naming the
/// key path; absent keys take defaults.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);

ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const ExperimentConfig& c);

}  // namespace bfdn
