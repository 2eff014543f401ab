#pragma once

#include <array>
#include <complex>
#include <optional>
#include <unordered_map>
#include <vector>

#include "recipcrystal/crystal.hpp"

namespace recip {

using cdouble = std::complex<double>;

enum class Truncation { cubic, spherical };

using WaveVec = std::array<int, 3>;

// Truncated reciprocal-space wave-vector set, ordered lexicographically so
// that row/token identity is deterministic.
class WaveSet {
 public:
  WaveSet() = default;
  Truncation truncation = Truncation::cubic;
  int jmax = 0;
  std::vector<WaveVec> vectors;

  int size() const { return static_cast<int>(vectors.size()); }
  // Row of w, or nullopt when w left the truncation.
  std::optional<int> index_of(const WaveVec& w) const;
  int zero_index() const { return zero_index_; }

  void rebuild_index();

 private:
  std::unordered_map<long long, int> index_;
  int zero_index_ = -1;
};

WaveSet build_wave_set(Truncation truncation, int jmax);

// Complex coefficient matrix, rows in WaveSet order, 6 species-slot columns.
// slot_species[k] is the atomic number occupying column k, 0 when empty.
struct FourierRepr {
  WaveSet wave_set;
  std::array<int, kMaxSpecies> slot_species{0, 0, 0, 0, 0, 0};
  std::vector<cdouble> coeffs;  // row-major (|W| x 6)

  cdouble& at(int row, int slot) { return coeffs[static_cast<size_t>(row) * kMaxSpecies + slot]; }
  const cdouble& at(int row, int slot) const {
    return coeffs[static_cast<size_t>(row) * kMaxSpecies + slot];
  }
};

// Exact phase table: roots[k] = exp(-2*pi*i*k/n), built Hermitian-symmetric
// (roots[n-k] == conj(roots[k]) bitwise) so coefficient symmetry is exact.
std::vector<cdouble> unit_roots(int n);

// F_w^(z) = sum_a exp(-2*pi*i * w . f_a^(z)) per species column. Species i is
// placed in column slots[i]; the default is identity order.
FourierRepr fourier_forward(const Crystal& c, const WaveSet& ws);
FourierRepr fourier_forward(const Crystal& c, const WaveSet& ws,
                            const std::array<int, kMaxSpecies>& species_to_slot,
                            int n_species);

// F'_w = exp(-2*pi*i * w . delta) * F_{M^T w}. Requires the wave set to be
// closed under M^T; otherwise throws WaveSetNotClosed.
FourierRepr symmetry_transform(const FourierRepr& fr, const SymmetryOp& op);

// max over (w, slot) of |F_w - exp(-2*pi*i*w.delta) * F_{M^T w}|; ~0 iff the
// operation is a symmetry of the configuration.
double symmetry_residual(const FourierRepr& fr, const SymmetryOp& op);

}  // namespace recip
