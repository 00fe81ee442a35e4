#include "bfdn/pgm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include "bfdn/csv.hpp"

namespace bfdn {

namespace {

class HeaderReader {
 public:
  explicit HeaderReader(const std::vector<std::uint8_t>& b) : b_(b) {}

  // Skips whitespace and '#' comments, then reads a decimal field.
  std::uint64_t number(const char* what) {
    skip();
    if (pos_ >= b_.size()) throw PgmError(std::string("PGM header truncated before ") + what);
    if (!std::isdigit(b_[pos_])) throw PgmError(std::string("PGM header: expected ") + what);
    std::uint64_t v = 0;
    while (pos_ < b_.size() && std::isdigit(b_[pos_])) {
      v = v * 10 + (b_[pos_++] - '0');
      if (v > 0xffffffffull) throw PgmError(std::string("PGM header: ") + what + " too large");
    }
    return v;
  }

  // Exactly one whitespace byte separates the header from the raster.
  std::size_t raster_start() {
    if (pos_ >= b_.size() || !std::isspace(b_[pos_])) throw PgmError("PGM header: missing separator before raster");
    return pos_ + 1;
  }

 private:
  void skip() {
    while (pos_ < b_.size()) {
      if (std::isspace(b_[pos_])) {
        ++pos_;
      } else if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n' && b_[pos_] != '\r') ++pos_;
      } else {
        break;
      }
    }
  }

  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 2;
};

}  // namespace

PgmImage decode_pgm(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P') throw PgmError("not a PGM file: bad magic");
  if (bytes[1] == '2') throw PgmError("unsupported PGM variant P2 (ASCII); only binary P5 is supported");
  if (bytes[1] != '5') throw PgmError(std::string("unsupported PNM variant P") + char(bytes[1]) + "; expected P5");
  HeaderReader h(bytes);
  PgmImage img;
  img.width = h.number("width");
  img.height = h.number("height");
  const auto maxval = h.number("maxval");
  if (maxval < 1 || maxval > 65535) throw PgmError("PGM maxval " + std::to_string(maxval) + " outside 1..65535");
  img.maxval = std::uint32_t(maxval);
  if (img.width == 0 || img.height == 0) throw PgmError("PGM image has zero extent");
  const std::size_t start = h.raster_start();
  const std::size_t bps = img.maxval > 255 ? 2 : 1;
  const std::size_t n = img.width * img.height;
  if (bytes.size() - start < n * bps)
    throw PgmError("PGM raster truncated: expected " + std::to_string(n * bps) + " bytes, found " +
                   std::to_string(bytes.size() - start));
  img.pixels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint16_t v = bps == 1 ? bytes[start + i] : std::uint16_t(bytes[start + 2 * i] << 8 | bytes[start + 2 * i + 1]);
    if (v > img.maxval) throw PgmError("PGM sample " + std::to_string(v) + " exceeds maxval");
    img.pixels[i] = v;
  }
  return img;
}

std::vector<std::uint8_t> encode_pgm(const PgmImage& img) {
  if (img.maxval < 1 || img.maxval > 65535) throw PgmError("PGM maxval outside 1..65535");
  if (img.pixels.size() != img.width * img.height) throw PgmError("PGM pixel count does not match extents");
  const std::string header =
      "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n" + std::to_string(img.maxval) + "\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  for (auto v : img.pixels) {
    if (v > img.maxval) throw PgmError("PGM sample exceeds maxval");
    if (img.maxval > 255) out.push_back(std::uint8_t(v >> 8));
    out.push_back(std::uint8_t(v & 0xff));
  }
  return out;
}

PgmImage load_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PgmError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_pgm(bytes);
  } catch (const PgmError& e) {
    throw PgmError(path.string() + ": " + e.what());
  }
}

void save_pgm(const PgmImage& img, const std::filesystem::path& path) {
  const auto bytes = encode_pgm(img);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw PgmError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw PgmError("failed writing " + path.string());
}

Image to_image(const PgmImage& img) {
  Image out = image_tensor<float>(img.height, img.width);
  const double scale = 255.0 / img.maxval;
  for (std::size_t i = 0; i < img.pixels.size(); ++i) out[i] = float(img.pixels[i] * scale);
  return out;
}

PgmImage from_image(const Image& img) {
  if (img.rank() != 4 || img.dim(0) != 1 || img.dim(1) != 1)
    throw ShapeError("from_image: expected [1,1,H,W], got " + shape_string(img.shape()));
  PgmImage out{img.dim(3), img.dim(2), 255, std::vector<std::uint16_t>(img.size())};
  for (std::size_t i = 0; i < img.size(); ++i)
    out.pixels[i] = std::uint16_t(std::lround(std::clamp(double(img[i]), 0.0, 255.0)));
  return out;
}

void save_scaled_pgm(const Tensor<double>& values, std::size_t height, std::size_t width,
                     const std::filesystem::path& path) {
  if (values.size() != height * width) throw ShapeError("save_scaled_pgm: value count does not match extents");
  const auto [lo, hi] = std::minmax_element(values.data().begin(), values.data().end());
  const double mn = *lo, mx = *hi, span = mx > mn ? mx - mn : 1.0;
  PgmImage img{width, height, 255, std::vector<std::uint16_t>(values.size())};
  for (std::size_t i = 0; i < values.size(); ++i)
    img.pixels[i] = std::uint16_t(std::lround(255.0 * (values[i] - mn) / span));
  save_pgm(img, path);
  std::ofstream side(path.string() + ".txt");
  if (!side) throw PgmError("cannot write " + path.string() + ".txt");
  side << "min " << format_number(mn) << " -> 0\nmax " << format_number(mx) << " -> 255\n";
}

}  // namespace bfdn
