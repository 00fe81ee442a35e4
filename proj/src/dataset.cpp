#include "bfdn/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>

#include <json.hpp>

#include "bfdn/csv.hpp"
#include "bfdn/pgm.hpp"

namespace bfdn {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<std::string> DatasetManifest::files(const std::string& split) const {
  std::vector<std::string> out;
  for (const auto& e : entries)
    if (e.split == split) out.push_back(e.file);
  return out;
}

void DatasetManifest::save() const {
  json files = json::array();
  for (const auto& e : entries) files.push_back({{"file", e.file}, {"split", e.split}, {"checksum", e.checksum}});
  std::ofstream out(root / kManifestName);
  if (!out) throw std::runtime_error("cannot write " + (root / kManifestName).string());
  out << json{{"seed", seed}, {"files", files}}.dump(2) << '\n';
}

std::vector<std::string> assign_splits(std::size_t count, double validation_fraction, double test_fraction,
                                       std::uint64_t seed) {
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng(seed).fork(0xda7a);
  for (std::size_t i = count; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  const auto ntest = std::size_t(std::lround(test_fraction * double(count)));
  const auto nval = std::size_t(std::lround(validation_fraction * double(count)));
  std::vector<std::string> split(count, "train");
  for (std::size_t k = 0; k < count; ++k) {
    if (k < ntest) split[order[k]] = "test";
    else if (k < ntest + nval) split[order[k]] = "validation";
  }
  return split;
}

std::string file_checksum(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return hex64(fnv1a64(bytes));
}

DatasetManifest load_manifest(const fs::path& root) {
  std::ifstream in(root / kManifestName);
  if (!in) throw std::runtime_error("cannot open " + (root / kManifestName).string());
  DatasetManifest m;
  m.root = root;
  try {
    const json j = json::parse(in);
    m.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& f : j.at("files"))
      m.entries.push_back({f.at("file").get<std::string>(), f.at("split").get<std::string>(),
                           f.at("checksum").get<std::string>()});
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed manifest in " + root.string() + ": " + e.what());
  }
  for (const auto& e : m.entries) {
    if (e.split != "train" && e.split != "validation" && e.split != "test")
      throw std::runtime_error("manifest entry " + e.file + " has unknown split '" + e.split + "'");
    if (file_checksum(root / e.file) != e.checksum)
      throw std::runtime_error("checksum mismatch for " + (root / e.file).string());
  }
  return m;
}

DatasetManifest scan_dataset(const fs::path& root, std::uint64_t seed) {
  if (fs::exists(root / kManifestName)) return load_manifest(root);
  if (!fs::is_directory(root)) throw std::runtime_error("dataset directory " + root.string() + " does not exist");
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_regular_file() && e.path().extension() == ".pgm") names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  DatasetManifest m;
  m.root = root;
  m.seed = seed;
  const auto split = assign_splits(names.size(), 0.1, 0.2, seed);
  for (std::size_t i = 0; i < names.size(); ++i) m.entries.push_back({names[i], split[i], file_checksum(root / names[i])});
  return m;
}

std::vector<Image> load_split(const DatasetManifest& manifest, const std::string& split) {
  std::vector<Image> out;
  for (const auto& f : manifest.files(split)) out.push_back(to_image(load_pgm(manifest.root / f)));
  return out;
}

namespace {

struct Polygon {
  std::vector<double> x, y;
  bool contains(double px, double py) const {
    bool in = false;
    for (std::size_t i = 0, j = x.size() - 1; i < x.size(); j = i++) {
      if ((y[i] > py) != (y[j] > py) && px < (x[j] - x[i]) * (py - y[i]) / (y[j] - y[i]) + x[i]) in = !in;
    }
    return in;
  }
};

}  // namespace

Image synth_image(std::size_t size, Rng& rng) {
  if (size < 32) throw std::invalid_argument("synth_image: size must be >= 32");
  const double s = double(size);
  Image img = image_tensor<float>(size, size);

  const double base = rng.uniform(70, 180);
  const double angle = rng.uniform(0, 2 * std::numbers::pi);
  const double slope = rng.uniform(5, 30) / s;
  const double gx = slope * std::cos(angle), gy = slope * std::sin(angle);

  // gray levels drawn without replacement from well-separated bins
  std::vector<double> levels;
  for (double v = 20; v <= 235; v += 24) levels.push_back(v);
  for (std::size_t i = levels.size(); i > 1; --i) std::swap(levels[i - 1], levels[rng.below(i)]);

  const int npoly = 5 + int(rng.below(5));
  std::vector<Polygon> polys;
  std::vector<double> fill;
  for (int p = 0; p < npoly; ++p) {
    const double cx = rng.uniform(0.1, 0.9) * s, cy = rng.uniform(0.1, 0.9) * s;
    const double r = rng.uniform(0.12, 0.32) * s;
    const int nv = 3 + int(rng.below(5));
    std::vector<double> ang(nv);
    for (auto& a : ang) a = rng.uniform(0, 2 * std::numbers::pi);
    std::sort(ang.begin(), ang.end());
    Polygon poly;
    for (double a : ang) {
      const double rr = r * rng.uniform(0.6, 1.0);
      poly.x.push_back(cx + rr * std::cos(a));
      poly.y.push_back(cy + rr * std::sin(a));
    }
    polys.push_back(std::move(poly));
    fill.push_back(levels[std::size_t(p) % levels.size()] + rng.uniform(-1.5, 1.5));
  }

  struct Wave { double fx, fy, phase, amp; };
  std::vector<Wave> waves(4);
  for (auto& w : waves) w = {rng.uniform(-0.15, 0.15), rng.uniform(-0.15, 0.15), rng.uniform(0, 2 * std::numbers::pi),
                             rng.uniform(0.2, 0.6)};

  for (std::size_t i = 0; i < size; ++i) {
    for (std::size_t j = 0; j < size; ++j) {
      const double px = double(j) + 0.5, py = double(i) + 0.5;
      double v = base + gx * (px - s / 2) + gy * (py - s / 2);
      for (std::size_t p = polys.size(); p-- > 0;) {
        if (polys[p].contains(px, py)) {
          v = fill[p];
          break;
        }
      }
      for (const auto& w : waves) v += w.amp * std::sin(2 * std::numbers::pi * (w.fx * px + w.fy * py) + w.phase);
      img.at(0, 0, i, j) = float(std::clamp(v, 0.0, 255.0));
    }
  }
  return img;
}

DatasetManifest synth_dataset(std::size_t count, std::size_t size, std::uint64_t seed, const fs::path& out_dir) {
  if (size < 32) throw std::invalid_argument("synth: size must be >= 32");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) throw std::runtime_error("cannot create directory " + out_dir.string());
  DatasetManifest m;
  m.root = out_dir;
  m.seed = seed;
  const auto split = assign_splits(count, 0.1, 0.2, seed);
  const Rng base(seed);
  for (std::size_t k = 0; k < count; ++k) {
    Rng rng = base.fork(k);
    char name[32];
    std::snprintf(name, sizeof name, "synth_%04zu.pgm", k);
    save_pgm(from_image(synth_image(size, rng)), out_dir / name);
    m.entries.push_back({name, split[k], file_checksum(out_dir / name)});
  }
  m.save();
  return m;
}

}  // namespace bfdn
