#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace bfdn {

inline constexpr std::string_view kVersion = "0.1.0";

/// Shortest round-trip decimal form; "inf", "-inf" and "nan" for the
/// non-finite values.
std::string format_number(double v);

std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t v);

/// First line of every emitted CSV.
struct Provenance {
  std::uint64_t seed = 0;
  std::string config_checksum = "none";
};

void write_provenance(std::ostream& os, const Provenance& p);

/// Named numeric columns, one row per entry.
struct SweepTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  std::size_t column(std::string_view name) const;
  std::vector<double> values(std::string_view name) const;
  void add_row(std::vector<double> row);
  void write_csv(std::ostream& os, const Provenance& p) const;
};

}  // namespace bfdn
