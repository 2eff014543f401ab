#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "recipcrystal/lattice.hpp"
#include "recipcrystal/rng.hpp"

namespace recip {

inline constexpr int kMaxSpecies = 6;
inline constexpr int kMaxAtomicNumber = 83;

// Fractional coordinate stored exactly as integer numerators over the
// crystal's grid denominator; each component is in [0, denominator).
using GridCoord = std::array<int, 3>;

struct SpeciesEntry {
  int atomic_number = 0;  // 1..83
  int count = 0;          // > 0
};

// Ordered set of (atomic number, multiplicity) pairs; atomic numbers
// strictly increasing, at most 6 entries.
struct SpeciesSet {
  std::vector<SpeciesEntry> entries;
};

struct Crystal {
  LatticeMatrix lattice;
  SpeciesSet species;
  // coords[i] lists the grid coordinates of species.entries[i], duplicate-free.
  std::vector<std::vector<GridCoord>> coords;
  int grid_denominator = 48;

  int total_atoms() const {
    int n = 0;
    for (const auto& c : coords) n += static_cast<int>(c.size());
    return n;
  }
};

// Lattice-preserving symmetry operation: integer rotation with det +-1 plus
// a fractional translation whose components are twelfths drawn from
// {0, 2, 3, 4, 6}/12 (i.e. {0, 1/6, 1/4, 1/3, 1/2}).
struct SymmetryOp {
  Eigen::Matrix3i rotation = Eigen::Matrix3i::Identity();
  std::array<int, 3> translation_twelfths{0, 0, 0};

  std::array<double, 3> translation() const {
    return {translation_twelfths[0] / 12.0, translation_twelfths[1] / 12.0,
            translation_twelfths[2] / 12.0};
  }
};

bool is_admissible_twelfth(int t);
bool symmetry_op_valid(const SymmetryOp& op);

// Round each component of each coordinate to the nearest k/denominator and
// wrap into [0,1). Throws InvalidDenominator unless denominator is a positive
// multiple of 12, and CollisionAfterSnap when two inputs land on the same
// grid point.
std::vector<GridCoord> snap_coords(const std::vector<std::array<double, 3>>& raw,
                                   int denominator);

// Returns all invariant violations as strings; empty means valid.
std::vector<std::string> validate_crystal(const Crystal& c);

// Deterministic random crystal for tests and toy corpora. Species counts are
// uniform in [1, max], sites uniform on the grid without collision, and the
// 6 lattice-log coefficients uniform in [-0.5, 2.5].
Crystal synth_crystal(std::uint64_t seed, int max_species, int max_atoms_per_species,
                      int denominator);

// f' = M f + delta (mod 1), carried out exactly on grid numerators.
Crystal apply_symmetry(const Crystal& c, const SymmetryOp& op);

}  // namespace recip
