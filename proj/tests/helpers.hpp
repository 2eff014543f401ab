#pragma once

#include <Eigen/Dense>
#include <array>
#include <set>

#include "recipcrystal/crystal.hpp"
#include "recipcrystal/rng.hpp"

namespace recip::testing {

// Uniform random rotation from a normalized quaternion.
inline Eigen::Matrix3d random_rotation(Rng& rng) {
  Eigen::Vector4d q;
  for (int i = 0; i < 4; ++i) q(i) = rng.normal();
  q.normalize();
  const double w = q(0), x = q(1), y = q(2), z = q(3);
  Eigen::Matrix3d r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

// Random signed permutation matrix (det +-1); always maps a cubic wave set
// onto itself.
inline Eigen::Matrix3i random_signed_permutation(Rng& rng) {
  std::array<int, 3> perm{0, 1, 2};
  for (int i = 2; i > 0; --i) {
    std::swap(perm[i], perm[rng.uniform_int(0, i)]);
  }
  Eigen::Matrix3i m = Eigen::Matrix3i::Zero();
  for (int i = 0; i < 3; ++i) {
    m(i, perm[i]) = rng.uniform_int(0, 1) == 0 ? 1 : -1;
  }
  return m;
}

inline SymmetryOp random_symmetry_op(Rng& rng) {
  SymmetryOp op;
  op.rotation = random_signed_permutation(rng);
  static constexpr std::array<int, 5> admissible{0, 2, 3, 4, 6};
  for (int i = 0; i < 3; ++i) {
    op.translation_twelfths[i] = admissible[rng.uniform_int(0, 4)];
  }
  return op;
}

// Smallest crystal invariant under `op`: the union of op-orbits of a few
// random seed sites. The affine map f -> Mf + delta (mod 1) is a bijection
// on the finite grid, so each forward orbit is a cycle.
inline Crystal orbit_closed_crystal(Rng& rng, const SymmetryOp& op, int denominator,
                                    int n_seeds) {
  const int unit = denominator / 12;
  auto step = [&](const GridCoord& f) {
    GridCoord next;
    for (int i = 0; i < 3; ++i) {
      long long v = 0;
      for (int j = 0; j < 3; ++j) v += 1LL * op.rotation(i, j) * f[j];
      v += 1LL * unit * op.translation_twelfths[i];
      v %= denominator;
      if (v < 0) v += denominator;
      next[i] = static_cast<int>(v);
    }
    return next;
  };
  std::set<GridCoord> sites;
  for (int s = 0; s < n_seeds; ++s) {
    GridCoord g{static_cast<int>(rng.uniform_int(0, denominator - 1)),
                static_cast<int>(rng.uniform_int(0, denominator - 1)),
                static_cast<int>(rng.uniform_int(0, denominator - 1))};
    while (sites.insert(g).second) g = step(g);
  }
  Crystal c;
  c.grid_denominator = denominator;
  c.species.entries.push_back({14, static_cast<int>(sites.size())});
  c.coords.emplace_back(sites.begin(), sites.end());
  return c;
}

}  // namespace recip::testing
