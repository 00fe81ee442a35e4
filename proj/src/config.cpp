#include "bfdn/config.hpp"

#include <fstream>
#include <set>

#include "bfdn/csv.hpp"

namespace bfdn {

using nlohmann::json;

namespace {

// Reads fields from one JSON object, remembering which keys were consumed
// so leftovers can be reported.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where(key) + ": " + e.what());
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string where(const std::string& key = "") const {
    std::string p = path_.empty() ? key : key.empty() ? path_ : path_ + "." + key;
    return p.empty() ? "config" : "config key '" + p + "'";
  }
  std::string sub(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError("unknown " + where(k));
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace

json to_json(const ModelConfig& c) {
  return {{"arch", to_string(c.arch)},
          {"depth", c.depth},
          {"channels", c.channels},
          {"bias_enabled", c.bias_enabled},
          {"norm_enabled", c.norm_enabled},
          {"recurrence_t_max", c.recurrence_t_max},
          {"dense_blocks", c.dense_blocks},
          {"seed", c.seed}};
}

namespace {

ModelConfig read_model(const json& j, const std::string& path, bool with_seed) {
  Reader r(j, path);
  std::string arch = "dncnn";
  r.get("arch", arch);
  ModelConfig c;
  try {
    c = ModelConfig::desk_scale(arch_from_string(arch));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(r.where("arch") + ": " + e.what());
  }
  r.get("depth", c.depth);
  r.get("channels", c.channels);
  r.get("bias_enabled", c.bias_enabled);
  r.get("norm_enabled", c.norm_enabled);
  r.get("recurrence_t_max", c.recurrence_t_max);
  r.get("dense_blocks", c.dense_blocks);
  if (with_seed) r.get("seed", c.seed);
  r.finish();
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

}  // namespace

ModelConfig model_config_from_json(const json& j) { return read_model(j, "model", true); }

json to_json(const ExperimentConfig& c) {
  const TrainConfig& t = c.train;
  json model = to_json(c.model);
  model.erase("seed");
  return {
      {"schema", kConfigSchema},
      {"seed", c.seed},
      {"model", model},
      {"noise",
       {{"distribution", to_string(t.noise.distribution)},
        {"sigma_min", t.noise.sigma_min},
        {"sigma_max", t.noise.sigma_max}}},
      {"train",
       {{"patch_size", t.patch_size},
        {"patch_stride", t.patch_stride},
        {"batch_size", t.batch_size},
        {"epochs", t.epochs},
        {"max_steps", t.max_steps},
        {"lr_initial", t.lr_initial},
        {"schedule",
         {{"kind", t.schedule.kind == LrSchedule::Kind::milestones ? "milestones" : "plateau"},
          {"milestones", t.schedule.milestones},
          {"factor", t.schedule.factor}}},
        {"early_stopping", t.early_stopping},
        {"augment",
         {{"flips", t.augment.flips},
          {"rotations", t.augment.rotations},
          {"downsampling", t.augment.downsampling},
          {"scales", t.augment.scales}}},
        {"adam", {{"beta1", t.adam.beta1}, {"beta2", t.adam.beta2}, {"eps", t.adam.eps}}},
        {"validation_fraction", t.validation_fraction},
        {"deterministic", t.deterministic}}},
      {"analysis",
       {{"patch_size", c.analysis.patch_size},
        {"alphas", c.analysis.alphas},
        {"sweep_sigmas", c.analysis.sweep_sigmas},
        {"svd_sigmas", c.analysis.svd_sigmas},
        {"filter_pixels", c.analysis.filter_pixels}}},
  };
}

ExperimentConfig experiment_config_from_json(const json& j) {
  Reader r(j, "");
  std::string schema;
  r.get("schema", schema);
  if (schema != kConfigSchema)
    throw ConfigError("config schema must be \"" + std::string(kConfigSchema) + "\", got \"" + schema + "\"");
  ExperimentConfig c;
  r.get("seed", c.seed);
  if (const json* m = r.child("model")) c.model = read_model(*m, "model", false);
  c.model.seed = c.seed;
  TrainConfig& t = c.train;
  t.seed = c.seed;
  if (const json* n = r.child("noise")) {
    Reader nr(*n, "noise");
    std::string dist = to_string(t.noise.distribution);
    nr.get("distribution", dist);
    try {
      t.noise.distribution = noise_distribution_from_string(dist);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(nr.where("distribution") + ": " + e.what());
    }
    nr.get("sigma_min", t.noise.sigma_min);
    nr.get("sigma_max", t.noise.sigma_max);
    nr.finish();
  }
  if (const json* tj = r.child("train")) {
    Reader tr(*tj, "train");
    tr.get("patch_size", t.patch_size);
    tr.get("patch_stride", t.patch_stride);
    tr.get("batch_size", t.batch_size);
    tr.get("epochs", t.epochs);
    tr.get("max_steps", t.max_steps);
    tr.get("lr_initial", t.lr_initial);
    if (const json* s = tr.child("schedule")) {
      Reader sr(*s, "train.schedule");
      std::string kind = "milestones";
      sr.get("kind", kind);
      if (kind == "milestones") t.schedule.kind = LrSchedule::Kind::milestones;
      else if (kind == "plateau") t.schedule.kind = LrSchedule::Kind::plateau;
      else throw ConfigError(sr.where("kind") + ": expected \"milestones\" or \"plateau\", got \"" + kind + "\"");
      sr.get("milestones", t.schedule.milestones);
      sr.get("factor", t.schedule.factor);
      sr.finish();
    }
    tr.get("early_stopping", t.early_stopping);
    if (const json* a = tr.child("augment")) {
      Reader ar(*a, "train.augment");
      ar.get("flips", t.augment.flips);
      ar.get("rotations", t.augment.rotations);
      ar.get("downsampling", t.augment.downsampling);
      ar.get("scales", t.augment.scales);
      ar.finish();
    }
    if (const json* a = tr.child("adam")) {
      Reader ar(*a, "train.adam");
      ar.get("beta1", t.adam.beta1);
      ar.get("beta2", t.adam.beta2);
      ar.get("eps", t.adam.eps);
      ar.finish();
    }
    tr.get("validation_fraction", t.validation_fraction);
    tr.get("deterministic", t.deterministic);
    tr.finish();
  }
  if (const json* a = r.child("analysis")) {
    Reader ar(*a, "analysis");
    ar.get("patch_size", c.analysis.patch_size);
    ar.get("alphas", c.analysis.alphas);
    ar.get("sweep_sigmas", c.analysis.sweep_sigmas);
    ar.get("svd_sigmas", c.analysis.svd_sigmas);
    ar.get("filter_pixels", c.analysis.filter_pixels);
    ar.finish();
  }
  r.finish();
  try {
    t.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (c.analysis.patch_size < 1) throw ConfigError("analysis.patch_size must be >= 1");
  return c;
}

std::string ExperimentConfig::checksum() const { return hex64(fnv1a64(to_json(*this).dump())); }

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return experiment_config_from_json(j);
}

void save_config(const std::filesystem::path& path, const ExperimentConfig& c) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write config file " + path.string());
  out << to_json(c).dump(2) << '\n';
}

}  // namespace bfdn
