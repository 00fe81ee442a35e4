#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "bfdn/training.hpp"

namespace bfdn {

struct ManifestEntry {
  std::string file;      // relative to the manifest directory
  std::string split;     // "train", "validation" or "test"
  std::string checksum;  // FNV-1a 64 of the file bytes, hex
  bool operator==(const ManifestEntry&) const = default;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::uint64_t seed = 0;
  std::vector<ManifestEntry> entries;

  std::vector<std::string> files(const std::string& split) const;
  void save() const;  // root / "manifest.json"
};

inline constexpr const char* kManifestName = "manifest.json";

/// Seeded split assignment: test and validation fractions of the count,
/// the rest train.
std::vector<std::string> assign_splits(std::size_t count, double validation_fraction, double test_fraction,
                                       std::uint64_t seed);

std::string file_checksum(const std::filesystem::path& path);

/// Reads root/manifest.json and verifies every checksum.
DatasetManifest load_manifest(const std::filesystem::path& root);

/// Manifest for a directory: the stored one when present, otherwise every
/// *.pgm in name order with a seeded split.
DatasetManifest scan_dataset(const std::filesystem::path& root, std::uint64_t seed);

std::vector<Image> load_split(const DatasetManifest& manifest, const std::string& split);

/// One piecewise-smooth test image: a linear gradient, 5-9 flat polygons of
/// distinct gray levels, and a low-amplitude band-limited texture.
Image synth_image(std::size_t size, Rng& rng);

/// Writes `count` synthetic PGMs plus manifest.json into out_dir.
DatasetManifest synth_dataset(std::size_t count, std::size_t size, std::uint64_t seed,
                              const std::filesystem::path& out_dir);

}  // namespace bfdn
