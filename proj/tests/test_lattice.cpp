#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "helpers.hpp"
#include "recipcrystal/errors.hpp"
#include "recipcrystal/lattice.hpp"

using namespace recip;

namespace {

Eigen::Matrix3d random_positive_matrix(Rng& rng) {
  Eigen::Matrix3d m;
  do {
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) m(i, j) = rng.uniform(-3.0, 3.0);
    }
  } while (m.determinant() <= 0.1);
  return m;
}

// Independent route to the SPD polar factor: sqrtm(m^T m) via eigendecomposition.
Eigen::Matrix3d spd_sqrt_oracle(const Eigen::Matrix3d& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(m.transpose() * m);
  return eig.eigenvectors() * eig.eigenvalues().cwiseSqrt().asDiagonal() *
         eig.eigenvectors().transpose();
}

}  // namespace

TEST_CASE("polar decomposition of identity and isotropic scale") {
  PolarFactors f = polar_decompose({Eigen::Matrix3d::Identity()});
  CHECK((f.r - Eigen::Matrix3d::Identity()).norm() < 1e-12);
  CHECK((f.p - Eigen::Matrix3d::Identity()).norm() < 1e-12);

  f = polar_decompose({2.0 * Eigen::Matrix3d::Identity()});
  CHECK((f.r - Eigen::Matrix3d::Identity()).norm() < 1e-12);
  CHECK((f.p - 2.0 * Eigen::Matrix3d::Identity()).norm() < 1e-12);
}

TEST_CASE("polar decomposition reconstructs against the SVD oracle") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    LatticeMatrix m{random_positive_matrix(rng)};
    const PolarFactors f = polar_decompose(m);
    CHECK(((f.r * f.p) - m.m).norm() <= 1e-10 * m.m.norm());
    CHECK((f.r.transpose() * f.r - Eigen::Matrix3d::Identity()).norm() < 1e-12);
    CHECK(f.r.determinant() > 0.0);
    CHECK((f.p - f.p.transpose()).norm() < 1e-12);
    // independent eigendecomposition route
    CHECK((f.p - spd_sqrt_oracle(m.m)).norm() <= 1e-8 * m.m.norm());
  }
}

TEST_CASE("polar decomposition rejects singular and left-handed input") {
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
  m(2, 2) = 0.0;
  CHECK_THROWS_AS(polar_decompose({m}), SingularLattice);
  m(2, 2) = -1.0;
  CHECK_THROWS_AS(polar_decompose({m}), SingularLattice);
  m(2, 2) = 1e-14;
  CHECK_THROWS_AS(polar_decompose({m}), SingularLattice);
}

TEST_CASE("lattice log of identity and isotropic scales") {
  LatticeLog l = lattice_to_log({Eigen::Matrix3d::Identity()});
  CHECK(l.s.norm() < 1e-12);

  l = lattice_to_log({3.0 * Eigen::Matrix3d::Identity()});
  CHECK((l.s - std::log(3.0) * Eigen::Matrix3d::Identity()).norm() < 1e-12);
  CHECK(l.coeffs[0] == doctest::Approx(std::log(3.0)).epsilon(1e-12));
  CHECK(l.coeffs[3] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("lattice log is rotation invariant") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    LatticeMatrix m{random_positive_matrix(rng)};
    const Eigen::Matrix3d q = testing::random_rotation(rng);
    LatticeMatrix qm{q * m.m};
    if (qm.m.determinant() <= 0.0) continue;
    const LatticeLog a = lattice_to_log(m);
    const LatticeLog b = lattice_to_log(qm);
    CHECK((a.s - b.s).norm() <= 1e-10 * (1.0 + a.s.norm()));
  }
}

TEST_CASE("lattice log is additive under isotropic scaling") {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    LatticeMatrix m{random_positive_matrix(rng)};
    const double c = rng.uniform(0.2, 5.0);
    LatticeMatrix cm{c * m.m};
    const Eigen::Matrix3d expected =
        lattice_to_log(m).s + std::log(c) * Eigen::Matrix3d::Identity();
    CHECK((lattice_to_log(cm).s - expected).norm() < 1e-10 * (1.0 + expected.norm()));
  }
}

TEST_CASE("log_to_lattice inverts lattice_to_log") {
  CHECK((log_to_lattice(lattice_log_from_coeffs({0, 0, 0, 0, 0, 0})).m -
         Eigen::Matrix3d::Identity())
            .norm() < 1e-12);
  const double l3 = std::log(3.0);
  CHECK((log_to_lattice(lattice_log_from_coeffs({l3, l3, l3, 0, 0, 0})).m -
         3.0 * Eigen::Matrix3d::Identity())
            .norm() < 1e-12);

  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    std::array<double, 6> coeffs;
    for (double& v : coeffs) v = rng.uniform(-1.0, 1.5);
    const LatticeLog s = lattice_log_from_coeffs(coeffs);
    const LatticeLog back = lattice_to_log(log_to_lattice(s));
    CHECK((back.s - s.s).norm() <= 1e-9 * (1.0 + s.s.norm()));
    // stored symmetric exactly
    CHECK(back.s == back.s.transpose());
  }
}
