#include "mica/subspace.hpp"

#include <algorithm>
#include <numeric>

#include "mica/error.hpp"
#include "mica/rng.hpp"

namespace mica {

std::string to_string(SubspaceMode::Kind kind) {
  switch (kind) {
    case SubspaceMode::Kind::Minor:
      return "minor";
    case SubspaceMode::Kind::Major:
      return "major";
    case SubspaceMode::Kind::Random:
      return "random";
  }
  return "unknown";
}

SubspaceMode::Kind subspace_kind_from_string(const std::string& name) {
  if (name == "minor") return SubspaceMode::Kind::Minor;
  if (name == "major") return SubspaceMode::Kind::Major;
  if (name == "random") return SubspaceMode::Kind::Random;
  throw ContractViolation("unknown subspace mode '" + name + "' (expected minor, major or random)");
}

std::vector<std::size_t> select_indices(std::size_t m, std::size_t r, const SubspaceMode& mode) {
  if (r == 0 || r > m) {
    throw ContractViolation("select_indices: rank " + std::to_string(r) + " outside [1, " + std::to_string(m) + "]");
  }
  std::vector<std::size_t> idx(m);
  std::iota(idx.begin(), idx.end(), 0);
  switch (mode.kind) {
    case SubspaceMode::Kind::Minor:
      return {idx.end() - static_cast<std::ptrdiff_t>(r), idx.end()};
    case SubspaceMode::Kind::Major:
      return {idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(r)};
    case SubspaceMode::Kind::Random: {
      SplitMix64 gen(mode.seed);
      for (std::size_t i = 0; i < r; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(gen.below(m - i));
        std::swap(idx[i], idx[j]);
      }
      idx.resize(r);
      std::sort(idx.begin(), idx.end());
      return idx;
    }
  }
  throw ContractViolation("select_indices: invalid mode");
}

Matrix select_projection(const SvdFactors& factors, std::size_t r, const SubspaceMode& mode) {
  const std::size_t m = factors.s.size();
  const auto indices = select_indices(m, r, mode);
  return factors.u.select_cols(indices);
}

SpectrumReport spectrum_report(const SvdFactors& factors, std::size_t r) {
  const std::size_t n = factors.s.size();
  if (r == 0 || r > n) {
    throw ContractViolation("spectrum_report: rank " + std::to_string(r) + " outside [1, " + std::to_string(n) + "]");
  }
  SpectrumReport rep;
  double major = 0.0;
  double minor = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = factors.s[i] * factors.s[i];
    rep.total_energy += e;
    if (i < r) major += e;
    if (i >= n - r) minor += e;
  }
  if (rep.total_energy > 0.0) {
    rep.minor_energy_fraction = minor / rep.total_energy;
    rep.major_energy_fraction = major / rep.total_energy;
  }
  return rep;
}

}  // namespace mica
