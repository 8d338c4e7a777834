#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mica/densela.hpp"

namespace mica {

// Which singular directions of a weight a fixed adapter projection spans.
struct SubspaceMode {
  enum class Kind { Minor, Major, Random };

  Kind kind = Kind::Minor;
  std::uint64_t seed = 0;  // used by Random only

  static SubspaceMode minor() { return {Kind::Minor, 0}; }
  static SubspaceMode major() { return {Kind::Major, 0}; }
  static SubspaceMode random(std::uint64_t seed) { return {Kind::Random, seed}; }

  friend bool operator==(const SubspaceMode&, const SubspaceMode&) = default;
};

std::string to_string(SubspaceMode::Kind kind);
SubspaceMode::Kind subspace_kind_from_string(const std::string& name);

// Column indices of U picked by `mode` among the first m singular directions,
// ascending. Random draws r distinct indices by a partial Fisher-Yates
// shuffle driven by SplitMix64(seed).
std::vector<std::size_t> select_indices(std::size_t m, std::size_t r, const SubspaceMode& mode);

// d_out x r projection with orthonormal columns taken from factors.u.
// Requires 1 <= r <= min(d_out, d_in).
Matrix select_projection(const SvdFactors& factors, std::size_t r, const SubspaceMode& mode);

struct SpectrumReport {
  double total_energy = 0.0;
  double minor_energy_fraction = 0.0;
  double major_energy_fraction = 0.0;
};

// Energies are sums of squared singular values; the minor fraction covers the
// last r values, the major fraction the first r. An all-zero spectrum reports
// zero fractions.
SpectrumReport spectrum_report(const SvdFactors& factors, std::size_t r);

}  // namespace mica
