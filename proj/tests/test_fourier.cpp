#include <doctest.h>

#include <cmath>
#include <numbers>

#include "helpers.hpp"
#include "recipcrystal/errors.hpp"
#include "recipcrystal/fourier.hpp"

using namespace recip;

namespace {

// Direct summation in extended precision, independent of the table-based path.
cdouble direct_coeff(const Crystal& c, int species, const WaveVec& w) {
  long double re = 0, im = 0;
  for (const GridCoord& f : c.coords[species]) {
    const long double ang =
        -2.0L * std::numbers::pi_v<long double> *
        (static_cast<long double>(w[0]) * f[0] + static_cast<long double>(w[1]) * f[1] +
         static_cast<long double>(w[2]) * f[2]) /
        c.grid_denominator;
    re += std::cos(ang);
    im += std::sin(ang);
  }
  return {static_cast<double>(re), static_cast<double>(im)};
}

}  // namespace

TEST_CASE("wave set counts and ordering") {
  const WaveSet cubic4 = build_wave_set(Truncation::cubic, 4);
  CHECK(cubic4.size() == 729);

  const WaveSet cubic0 = build_wave_set(Truncation::cubic, 0);
  CHECK(cubic0.size() == 1);
  CHECK(cubic0.vectors[0] == WaveVec{0, 0, 0});

  // brute-force enumeration oracle for the spherical count
  const WaveSet sph3 = build_wave_set(Truncation::spherical, 3);
  int count = 0;
  for (int a = -3; a <= 3; ++a) {
    for (int b = -3; b <= 3; ++b) {
      for (int c = -3; c <= 3; ++c) {
        if (a * a + b * b + c * c <= 9) ++count;
      }
    }
  }
  CHECK(sph3.size() == count);

  // lexicographic order, zero vector present exactly once
  int zeros = 0;
  for (int i = 1; i < cubic4.size(); ++i) CHECK(cubic4.vectors[i - 1] < cubic4.vectors[i]);
  for (const auto& w : cubic4.vectors) zeros += w == WaveVec{0, 0, 0} ? 1 : 0;
  CHECK(zeros == 1);
  CHECK(cubic4.index_of({0, 0, 0}).value() == cubic4.zero_index());
}

TEST_CASE("fourier_forward analytic cases") {
  const WaveSet ws = build_wave_set(Truncation::cubic, 2);
  Crystal c;
  c.grid_denominator = 24;
  c.species.entries.push_back({6, 1});
  c.coords.push_back({GridCoord{0, 0, 0}});
  FourierRepr fr = fourier_forward(c, ws);
  for (int row = 0; row < ws.size(); ++row) {
    CHECK(std::abs(fr.at(row, 0) - cdouble{1.0, 0.0}) < 1e-15);
    for (int slot = 1; slot < kMaxSpecies; ++slot) CHECK(std::abs(fr.at(row, slot)) == 0.0);
  }

  // atoms at 0 and 1/2 along x: F(1,0,0) = 1 + exp(-i pi) = 0, F(2,0,0) = 2
  c.species.entries[0].count = 2;
  c.coords[0].push_back(GridCoord{12, 0, 0});
  fr = fourier_forward(c, ws);
  CHECK(std::abs(fr.at(*ws.index_of({1, 0, 0}), 0)) < 1e-15);
  CHECK(std::abs(fr.at(*ws.index_of({2, 0, 0}), 0) - cdouble{2.0, 0.0}) < 1e-15);
}

TEST_CASE("fourier_forward matches the extended-precision oracle") {
  const WaveSet ws = build_wave_set(Truncation::cubic, 3);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Crystal c = synth_crystal(seed, 4, 12, 48);
    const FourierRepr fr = fourier_forward(c, ws);
    for (size_t s = 0; s < c.species.entries.size(); ++s) {
      for (int row = 0; row < ws.size(); ++row) {
        CHECK(std::abs(fr.at(row, static_cast<int>(s)) -
                       direct_coeff(c, static_cast<int>(s), ws.vectors[row])) < 1e-10);
      }
    }
  }
}

TEST_CASE("zero-frequency multiplicity and hermitian symmetry") {
  const WaveSet ws = build_wave_set(Truncation::cubic, 2);
  for (std::uint64_t seed = 20; seed < 40; ++seed) {
    const Crystal c = synth_crystal(seed, 6, 16, 48);
    const FourierRepr fr = fourier_forward(c, ws);
    for (size_t s = 0; s < c.species.entries.size(); ++s) {
      const cdouble f0 = fr.at(ws.zero_index(), static_cast<int>(s));
      CHECK(std::abs(f0 - cdouble{static_cast<double>(c.species.entries[s].count), 0.0}) <
            1e-12);
    }
    for (int row = 0; row < ws.size(); ++row) {
      const WaveVec& w = ws.vectors[row];
      const int neg = *ws.index_of({-w[0], -w[1], -w[2]});
      for (int slot = 0; slot < kMaxSpecies; ++slot) {
        CHECK(std::abs(fr.at(row, slot) - std::conj(fr.at(neg, slot))) < 1e-12);
      }
    }
  }
}

TEST_CASE("translation covariance") {
  const WaveSet ws = build_wave_set(Truncation::cubic, 2);
  Rng rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    const Crystal c = synth_crystal(50 + trial, 3, 8, 24);
    SymmetryOp shift;  // identity rotation, admissible translation
    shift.translation_twelfths = {static_cast<int>(rng.uniform_int(0, 1)) ? 6 : 4,
                                  3, 2};
    const Crystal moved = apply_symmetry(c, shift);
    const FourierRepr fa = fourier_forward(c, ws);
    const FourierRepr fb = fourier_forward(moved, ws);
    const auto t = shift.translation();
    for (int row = 0; row < ws.size(); ++row) {
      const WaveVec& w = ws.vectors[row];
      const double ang = -2.0 * std::numbers::pi * (w[0] * t[0] + w[1] * t[1] + w[2] * t[2]);
      const cdouble phase{std::cos(ang), std::sin(ang)};
      for (size_t s = 0; s < c.species.entries.size(); ++s) {
        CHECK(std::abs(fb.at(row, static_cast<int>(s)) -
                       phase * fa.at(row, static_cast<int>(s))) < 1e-10);
      }
    }
  }
}

TEST_CASE("symmetry_transform identity and pure translation") {
  const WaveSet ws = build_wave_set(Truncation::cubic, 2);
  const Crystal c = synth_crystal(99, 2, 5, 24);
  const FourierRepr fr = fourier_forward(c, ws);

  const FourierRepr same = symmetry_transform(fr, SymmetryOp{});
  for (size_t i = 0; i < fr.coeffs.size(); ++i) CHECK(fr.coeffs[i] == same.coeffs[i]);

  SymmetryOp shift;
  shift.translation_twelfths = {6, 0, 0};
  const FourierRepr shifted = symmetry_transform(fr, shift);
  // zero-frequency row is unchanged; others pick up the phase
  for (int slot = 0; slot < kMaxSpecies; ++slot) {
    CHECK(std::abs(shifted.at(ws.zero_index(), slot) - fr.at(ws.zero_index(), slot)) < 1e-15);
  }
  const int row = *ws.index_of({1, 0, 0});
  CHECK(std::abs(shifted.at(row, 0) - cdouble{-1.0, 0.0} * fr.at(row, 0)) < 1e-12);
}

TEST_CASE("symmetry_transform rejects unclosed rotations") {
  const WaveSet ws = build_wave_set(Truncation::cubic, 2);
  const Crystal c = synth_crystal(7, 1, 3, 24);
  const FourierRepr fr = fourier_forward(c, ws);
  SymmetryOp shear;
  shear.rotation << 1, 1, 0, 0, 1, 0, 0, 0, 1;
  CHECK_THROWS_AS(symmetry_transform(fr, shear), WaveSetNotClosed);
}

TEST_CASE("commuting square: transform of coefficients == coefficients of transformed") {
  const WaveSet ws = build_wave_set(Truncation::cubic, 2);
  Rng rng(41);
  for (int trial = 0; trial < 25; ++trial) {
    const Crystal c = synth_crystal(200 + trial, 3, 8, trial % 2 == 0 ? 24 : 48);
    const SymmetryOp op = testing::random_symmetry_op(rng);
    const FourierRepr lhs = symmetry_transform(fourier_forward(c, ws), op);
    const FourierRepr rhs = fourier_forward(apply_symmetry(c, op), ws);
    double worst = 0.0;
    for (size_t i = 0; i < lhs.coeffs.size(); ++i) {
      worst = std::max(worst, std::abs(lhs.coeffs[i] - rhs.coeffs[i]));
    }
    CHECK(worst < 1e-10);
  }
}

TEST_CASE("symmetry_residual separates symmetric from generic configurations") {
  const WaveSet ws = build_wave_set(Truncation::cubic, 2);
  Rng rng(43);
  int nontrivial_checked = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const SymmetryOp op = testing::random_symmetry_op(rng);
    const Crystal sym = testing::orbit_closed_crystal(rng, op, 24, 2);
    CHECK(symmetry_residual(fourier_forward(sym, ws), op) <= 1e-10);

    const Crystal generic = synth_crystal(300 + trial, 1, 8, 24);
    if (op.rotation != Eigen::Matrix3i::Identity() ||
        op.translation_twelfths != std::array<int, 3>{0, 0, 0}) {
      if (symmetry_residual(fourier_forward(generic, ws), op) > 0.1) ++nontrivial_checked;
    }
    CHECK(symmetry_residual(fourier_forward(generic, ws), SymmetryOp{}) == 0.0);
  }
  CHECK(nontrivial_checked >= 15);  // generic crystals are overwhelmingly asymmetric
}
