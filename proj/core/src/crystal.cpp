#include "recipcrystal/crystal.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "recipcrystal/errors.hpp"

namespace recip {

namespace {

int positive_mod(long long v, int m) {
  long long r = v % m;
  if (r < 0) r += m;
  return static_cast<int>(r);
}

}  // namespace

bool is_admissible_twelfth(int t) {
  return t == 0 || t == 2 || t == 3 || t == 4 || t == 6;
}

bool symmetry_op_valid(const SymmetryOp& op) {
  const long long det = op.rotation.cast<long long>().determinant();
  if (det != 1 && det != -1) return false;
  for (int i = 0; i < 3; ++i) {
    if (!is_admissible_twelfth(op.translation_twelfths[i])) return false;
  }
  return true;
}

std::vector<GridCoord> snap_coords(const std::vector<std::array<double, 3>>& raw,
                                   int denominator) {
  if (denominator <= 0 || denominator % 12 != 0) {
    throw InvalidDenominator("snap denominator must be a positive multiple of 12, got " +
                             std::to_string(denominator));
  }
  std::vector<GridCoord> out;
  out.reserve(raw.size());
  std::set<GridCoord> seen;
  for (const auto& v : raw) {
    GridCoord g;
    for (int i = 0; i < 3; ++i) {
      if (!std::isfinite(v[i])) {
        throw CollisionAfterSnap("non-finite coordinate component");
      }
      g[i] = positive_mod(std::llround(v[i] * denominator), denominator);
    }
    if (!seen.insert(g).second) {
      throw CollisionAfterSnap("two atoms snapped to the same grid point");
    }
    out.push_back(g);
  }
  return out;
}

std::vector<std::string> validate_crystal(const Crystal& c) {
  std::vector<std::string> bad;
  if (c.grid_denominator <= 0 || c.grid_denominator % 12 != 0) {
    bad.push_back("grid denominator must be a positive multiple of 12");
  }
  if (c.species.entries.empty()) bad.push_back("no species present");
  if (static_cast<int>(c.species.entries.size()) > kMaxSpecies) {
    bad.push_back("species limit exceeded");
  }
  int prev_z = 0;
  for (const auto& e : c.species.entries) {
    if (e.atomic_number <= prev_z) bad.push_back("atomic numbers not strictly increasing");
    if (e.atomic_number < 1 || e.atomic_number > kMaxAtomicNumber) {
      bad.push_back("atomic number out of range 1..83");
    }
    if (e.count <= 0) bad.push_back("non-positive species count");
    prev_z = e.atomic_number;
  }
  if (c.coords.size() != c.species.entries.size()) {
    bad.push_back("coordinate lists do not match species entries");
    return bad;
  }
  for (size_t i = 0; i < c.coords.size(); ++i) {
    if (static_cast<int>(c.coords[i].size()) != c.species.entries[i].count) {
      bad.push_back("count mismatch for species " +
                    std::to_string(c.species.entries[i].atomic_number));
    }
    std::set<GridCoord> seen;
    for (const auto& g : c.coords[i]) {
      for (int k = 0; k < 3; ++k) {
        if (g[k] < 0 || g[k] >= c.grid_denominator) {
          bad.push_back("coordinate numerator outside [0, denominator)");
        }
      }
      if (!seen.insert(g).second) bad.push_back("duplicate site");
    }
  }
  return bad;
}

Crystal synth_crystal(std::uint64_t seed, int max_species, int max_atoms_per_species,
                      int denominator) {
  if (denominator <= 0 || denominator % 12 != 0) {
    throw InvalidDenominator("synth denominator must be a positive multiple of 12");
  }
  if (max_species < 1 || max_species > kMaxSpecies || max_atoms_per_species < 1) {
    throw GenerationFailure("species/count limits out of range");
  }
  Rng rng(seed);
  Crystal c;
  c.grid_denominator = denominator;

  const int n_species = static_cast<int>(rng.uniform_int(1, max_species));
  std::set<int> zs;
  while (static_cast<int>(zs.size()) < n_species) {
    zs.insert(static_cast<int>(rng.uniform_int(1, kMaxAtomicNumber)));
  }
  const long long capacity = 1LL * denominator * denominator * denominator;
  for (int z : zs) {
    SpeciesEntry e;
    e.atomic_number = z;
    e.count = static_cast<int>(rng.uniform_int(1, max_atoms_per_species));
    if (e.count > capacity) throw GenerationFailure("atom count exceeds grid capacity");
    c.species.entries.push_back(e);
  }
  for (const auto& e : c.species.entries) {
    std::set<GridCoord> sites;
    while (static_cast<int>(sites.size()) < e.count) {
      GridCoord g{static_cast<int>(rng.uniform_int(0, denominator - 1)),
                  static_cast<int>(rng.uniform_int(0, denominator - 1)),
                  static_cast<int>(rng.uniform_int(0, denominator - 1))};
      sites.insert(g);
    }
    c.coords.emplace_back(sites.begin(), sites.end());
  }
  std::array<double, 6> lc;
  for (double& v : lc) v = rng.uniform(-0.5, 2.5);
  c.lattice = log_to_lattice(lattice_log_from_coeffs(lc));
  return c;
}

Crystal apply_symmetry(const Crystal& c, const SymmetryOp& op) {
  if (!symmetry_op_valid(op)) {
    throw OffGridTranslation("invalid symmetry operation");
  }
  if (c.grid_denominator % 12 != 0) {
    throw OffGridTranslation("translation not representable on this grid");
  }
  const int d = c.grid_denominator;
  const int unit = d / 12;  // twelfths in grid numerator units
  Crystal out = c;
  for (size_t s = 0; s < c.coords.size(); ++s) {
    std::set<GridCoord> seen;
    for (size_t a = 0; a < c.coords[s].size(); ++a) {
      const GridCoord& f = c.coords[s][a];
      GridCoord g;
      for (int i = 0; i < 3; ++i) {
        long long v = 0;
        for (int j = 0; j < 3; ++j) v += 1LL * op.rotation(i, j) * f[j];
        v += 1LL * unit * op.translation_twelfths[i];
        g[i] = positive_mod(v, d);
      }
      out.coords[s][a] = g;
      seen.insert(g);
    }
    // |det M| = 1 makes the map injective mod 1 on the grid.
    if (seen.size() != c.coords[s].size()) {
      throw OffGridTranslation("symmetry op collapsed distinct sites");
    }
  }
  return out;
}

}  // namespace recip
