#include "recipcrystal/fourier.hpp"

#include <cmath>
#include <numbers>

#include "recipcrystal/errors.hpp"

namespace recip {

namespace {

long long wave_key(const WaveVec& w) {
  // Components fit comfortably in 20 bits each for any practical jmax.
  const long long off = 1 << 20;
  return ((w[0] + off) << 42) | ((w[1] + off) << 21) | (w[2] + off);
}

int positive_mod(long long v, int m) {
  long long r = v % m;
  if (r < 0) r += m;
  return static_cast<int>(r);
}

}  // namespace

std::optional<int> WaveSet::index_of(const WaveVec& w) const {
  auto it = index_.find(wave_key(w));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

void WaveSet::rebuild_index() {
  index_.clear();
  index_.reserve(vectors.size());
  for (int i = 0; i < size(); ++i) {
    index_.emplace(wave_key(vectors[i]), i);
    if (vectors[i] == WaveVec{0, 0, 0}) zero_index_ = i;
  }
}

WaveSet build_wave_set(Truncation truncation, int jmax) {
  WaveSet ws;
  ws.truncation = truncation;
  ws.jmax = jmax;
  const long long j2 = 1LL * jmax * jmax;
  for (int a = -jmax; a <= jmax; ++a) {
    for (int b = -jmax; b <= jmax; ++b) {
      for (int c = -jmax; c <= jmax; ++c) {
        if (truncation == Truncation::spherical &&
            1LL * a * a + 1LL * b * b + 1LL * c * c > j2) {
          continue;
        }
        ws.vectors.push_back({a, b, c});
      }
    }
  }
  ws.rebuild_index();
  return ws;
}

std::vector<cdouble> unit_roots(int n) {
  std::vector<cdouble> roots(n);
  roots[0] = {1.0, 0.0};
  for (int k = 1; k <= n / 2; ++k) {
    const double ang = -2.0 * std::numbers::pi * k / n;
    roots[k] = {std::cos(ang), std::sin(ang)};
    if (k < n - k) roots[n - k] = std::conj(roots[k]);
  }
  return roots;
}

FourierRepr fourier_forward(const Crystal& c, const WaveSet& ws) {
  std::array<int, kMaxSpecies> identity{0, 1, 2, 3, 4, 5};
  return fourier_forward(c, ws, identity, static_cast<int>(c.species.entries.size()));
}

FourierRepr fourier_forward(const Crystal& c, const WaveSet& ws,
                            const std::array<int, kMaxSpecies>& species_to_slot,
                            int n_species) {
  FourierRepr fr;
  fr.wave_set = ws;
  fr.coeffs.assign(static_cast<size_t>(ws.size()) * kMaxSpecies, cdouble{0.0, 0.0});
  const int d = c.grid_denominator;
  const std::vector<cdouble> roots = unit_roots(d);
  for (int s = 0; s < n_species; ++s) {
    const int slot = species_to_slot[s];
    fr.slot_species[slot] = c.species.entries[s].atomic_number;
    for (int row = 0; row < ws.size(); ++row) {
      const WaveVec& w = ws.vectors[row];
      cdouble acc{0.0, 0.0};
      for (const GridCoord& f : c.coords[s]) {
        // w . f is an exact rational with denominator d; the phase is an
        // exact table lookup.
        const long long dot = 1LL * w[0] * f[0] + 1LL * w[1] * f[1] + 1LL * w[2] * f[2];
        acc += roots[positive_mod(dot, d)];
      }
      fr.at(row, slot) = acc;
    }
  }
  return fr;
}

FourierRepr symmetry_transform(const FourierRepr& fr, const SymmetryOp& op) {
  const WaveSet& ws = fr.wave_set;
  const std::vector<cdouble> roots12 = unit_roots(12);
  FourierRepr out;
  out.wave_set = ws;
  out.slot_species = fr.slot_species;
  out.coeffs.assign(fr.coeffs.size(), cdouble{0.0, 0.0});
  for (int row = 0; row < ws.size(); ++row) {
    const WaveVec& w = ws.vectors[row];
    WaveVec mw;  // M^T w
    for (int i = 0; i < 3; ++i) {
      mw[i] = op.rotation(0, i) * w[0] + op.rotation(1, i) * w[1] + op.rotation(2, i) * w[2];
    }
    const auto src = ws.index_of(mw);
    if (!src) {
      throw WaveSetNotClosed("M^T maps a retained wave vector outside the truncation");
    }
    // w . delta in twelfths
    const long long t = 1LL * w[0] * op.translation_twelfths[0] +
                        1LL * w[1] * op.translation_twelfths[1] +
                        1LL * w[2] * op.translation_twelfths[2];
    const cdouble phase = roots12[positive_mod(t, 12)];
    for (int slot = 0; slot < kMaxSpecies; ++slot) {
      out.at(row, slot) = phase * fr.at(*src, slot);
    }
  }
  return out;
}

double symmetry_residual(const FourierRepr& fr, const SymmetryOp& op) {
  const FourierRepr transformed = symmetry_transform(fr, op);
  double worst = 0.0;
  for (size_t i = 0; i < fr.coeffs.size(); ++i) {
    worst = std::max(worst, std::abs(fr.coeffs[i] - transformed.coeffs[i]));
  }
  return worst;
}

}  // namespace recip
