#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "bfdn/training.hpp"

namespace bfdn {

/// Binary (P5) graymap. Samples wider than 8 bits are big-endian on disk.
struct PgmImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::uint32_t maxval = 255;
  std::vector<std::uint16_t> pixels;  // row-major

  bool operator==(const PgmImage&) const = default;
};

class PgmError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

PgmImage decode_pgm(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> encode_pgm(const PgmImage& img);
PgmImage load_pgm(const std::filesystem::path& path);
void save_pgm(const PgmImage& img, const std::filesystem::path& path);

/// Samples rescaled to [0,255] (value * 255 / maxval).
Image to_image(const PgmImage& img);
/// Clamp to [0,255] and round; quantization happens only here.
PgmImage from_image(const Image& img);

/// Linear [min,max] -> [0,255] rendering of a single-channel tensor, with
/// the mapping written to `path` + ".txt".
void save_scaled_pgm(const Tensor<double>& values, std::size_t height, std::size_t width,
                     const std::filesystem::path& path);

}  // namespace bfdn
