#pragma once

#include <Eigen/Dense>
#include <array>

namespace recip {

// Lattice matrix: columns are the lattice vectors in Angstrom per fractional
// unit. Must be right-handed (det > 0) and non-degenerate.
struct LatticeMatrix {
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
};

// Rotation-invariant lattice encoding: the symmetric matrix logarithm of the
// polar factor of the lattice matrix. Stored as the full symmetric matrix
// plus the 6 independent coefficients in the packing order
// (s11, s22, s33, s12, s13, s23).
struct LatticeLog {
  Eigen::Matrix3d s = Eigen::Matrix3d::Zero();
  std::array<double, 6> coeffs{};
};

struct PolarFactors {
  Eigen::Matrix3d r;  // rotation, det +1
  Eigen::Matrix3d p;  // symmetric positive definite
};

// L = R * P with R in SO(3) and P symmetric positive definite, computed from
// the SVD L = U S V^T as R = U V^T, P = V S V^T.
// Throws SingularLattice when det(m) <= 0 or the singular values span more
// than 12 orders of magnitude.
PolarFactors polar_decompose(const LatticeMatrix& m);

// S = V diag(log sigma) V^T, computed from the eigendecomposition of m^T m
// so the result is exactly invariant under left rotations of m.
LatticeLog lattice_to_log(const LatticeMatrix& m);

// Canonical inverse with R = I: returns exp(s).
LatticeMatrix log_to_lattice(const LatticeLog& s);

// Rebuild the full symmetric matrix from 6 packed coefficients.
LatticeLog lattice_log_from_coeffs(const std::array<double, 6>& coeffs);

}  // namespace recip
