#include "recipcrystal/lattice.hpp"

#include <cmath>

#include "recipcrystal/errors.hpp"

namespace recip {

namespace {

void check_conditioning(const Eigen::Vector3d& sv) {
  if (!(sv.minCoeff() > 1e-12 * sv.maxCoeff()) || !(sv.maxCoeff() > 0.0)) {
    throw SingularLattice("lattice matrix is singular or too ill-conditioned");
  }
}

std::array<double, 6> pack_symmetric(const Eigen::Matrix3d& s) {
  return {s(0, 0), s(1, 1), s(2, 2), s(0, 1), s(0, 2), s(1, 2)};
}

Eigen::Matrix3d unpack_symmetric(const std::array<double, 6>& c) {
  Eigen::Matrix3d s;
  s << c[0], c[3], c[4],
       c[3], c[1], c[5],
       c[4], c[5], c[2];
  return s;
}

}  // namespace

PolarFactors polar_decompose(const LatticeMatrix& m) {
  if (!(m.m.determinant() > 0.0)) {
    throw SingularLattice("lattice matrix must have positive determinant");
  }
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(m.m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  check_conditioning(svd.singularValues());
  PolarFactors f;
  f.r = svd.matrixU() * svd.matrixV().transpose();
  f.p = svd.matrixV() * svd.singularValues().asDiagonal() * svd.matrixV().transpose();
  // det(m) > 0 implies det(U V^T) = +1, so f.r is a proper rotation.
  return f;
}

LatticeLog lattice_to_log(const LatticeMatrix& m) {
  if (!(m.m.determinant() > 0.0)) {
    throw SingularLattice("lattice matrix must have positive determinant");
  }
  // Eigendecomposition of m^T m gives V and sigma^2; it is identical for m
  // and Q*m, which makes rotation invariance hold to machine precision.
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(m.m.transpose() * m.m);
  Eigen::Vector3d sv = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  check_conditioning(sv);
  Eigen::Vector3d logs = sv.array().log();
  Eigen::Matrix3d s = eig.eigenvectors() * logs.asDiagonal() * eig.eigenvectors().transpose();
  s = ((s + s.transpose()) / 2.0).eval();  // exact symmetry as stored
  LatticeLog out;
  out.coeffs = pack_symmetric(s);
  out.s = unpack_symmetric(out.coeffs);
  return out;
}

LatticeMatrix log_to_lattice(const LatticeLog& s) {
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(s.s);
  Eigen::Vector3d exps = eig.eigenvalues().array().exp();
  LatticeMatrix out;
  out.m = eig.eigenvectors() * exps.asDiagonal() * eig.eigenvectors().transpose();
  return out;
}

LatticeLog lattice_log_from_coeffs(const std::array<double, 6>& coeffs) {
  LatticeLog out;
  out.coeffs = coeffs;
  out.s = unpack_symmetric(coeffs);
  return out;
}

}  // namespace recip
