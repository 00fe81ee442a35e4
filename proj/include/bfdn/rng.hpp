#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace bfdn {

/// xoshiro256** seeded through splitmix64. Integer and floating-point
/// conversions are done here rather than via <random> distributions so the
/// sample stream is identical across standard libraries and platforms.
class Rng {
 public:
  static constexpr std::string_view algorithm = "xoshiro256**/splitmix64";

  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer on [0, n).
  std::uint64_t below(std::uint64_t n);
  /// Standard normal via Box-Muller.
  double normal();

  /// Independent generator for a named substream; does not advance *this.
  Rng fork(std::uint64_t stream) const;

 private:
  std::uint64_t seed_;
  std::array<std::uint64_t, 4> s_{};
  double spare_ = 0;
  bool has_spare_ = false;
};

std::uint64_t splitmix64(std::uint64_t& state);

}  // namespace bfdn
