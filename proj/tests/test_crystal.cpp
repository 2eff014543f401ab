#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "recipcrystal/crystal.hpp"
#include "recipcrystal/errors.hpp"

using namespace recip;

TEST_CASE("snap_coords rounds to the nearest grid point and wraps") {
  auto snapped = snap_coords({{0.501, 0.0, 0.0}}, 24);
  CHECK(snapped[0] == GridCoord{12, 0, 0});

  // 1/6 is exactly representable on every multiple-of-12 grid.
  snapped = snap_coords({{1.0 / 6.0, 0.25, 1.0 / 3.0}}, 24);
  CHECK(snapped[0] == GridCoord{4, 6, 8});

  // wrap into [0,1)
  snapped = snap_coords({{0.999, -0.01, 1.49}}, 24);
  CHECK(snapped[0][0] == 0);
  CHECK(snapped[0][1] == 0);
  CHECK(snapped[0][2] == 12);
}

TEST_CASE("snap_coords error bound at denominator 48") {
  Rng rng(3);
  for (int i = 0; i < 2000; ++i) {
    const double x = rng.uniform();
    const int k = snap_coords({{x, 0, 0}}, 48)[0][0];
    double err = std::abs(x - k / 48.0);
    err = std::min(err, 1.0 - err);  // torus metric
    CHECK(err <= 1.0 / 96.0 + 1e-15);
  }
}

TEST_CASE("snap_coords is idempotent") {
  Rng rng(5);
  for (int i = 0; i < 100; ++i) {
    std::array<double, 3> x{rng.uniform(), rng.uniform(), rng.uniform()};
    const auto once = snap_coords({x}, 48);
    const auto twice = snap_coords(
        {{once[0][0] / 48.0, once[0][1] / 48.0, once[0][2] / 48.0}}, 48);
    CHECK(once == twice);
  }
}

TEST_CASE("snap_coords rejects bad denominators and collisions") {
  CHECK_THROWS_AS(snap_coords({{0.1, 0.2, 0.3}}, 13), InvalidDenominator);
  CHECK_THROWS_AS(snap_coords({{0.1, 0.2, 0.3}}, 0), InvalidDenominator);
  CHECK_THROWS_AS(snap_coords({{0.1, 0.1, 0.1}, {0.1001, 0.1, 0.1}}, 24),
                  CollisionAfterSnap);
}

TEST_CASE("validate_crystal flags the spec'd violations") {
  Crystal good = synth_crystal(42, 2, 4, 24);
  CHECK(validate_crystal(good).empty());

  Crystal dup = good;
  if (dup.coords[0].size() >= 2) {
    dup.coords[0][1] = dup.coords[0][0];
  } else {
    dup.coords[0].push_back(dup.coords[0][0]);
    dup.species.entries[0].count += 1;
  }
  auto violations = validate_crystal(dup);
  bool found = false;
  for (const auto& v : violations) found = found || v.find("duplicate site") != std::string::npos;
  CHECK(found);

  Crystal seven;
  seven.grid_denominator = 24;
  for (int z = 1; z <= 7; ++z) {
    seven.species.entries.push_back({z, 1});
    seven.coords.push_back({GridCoord{z, 0, 0}});
  }
  violations = validate_crystal(seven);
  found = false;
  for (const auto& v : violations) {
    found = found || v.find("species limit exceeded") != std::string::npos;
  }
  CHECK(found);
}

TEST_CASE("synth_crystal is deterministic and valid") {
  const Crystal a = synth_crystal(1, 1, 1, 24);
  CHECK(a.species.entries.size() == 1);
  CHECK(a.coords[0].size() == 1);
  CHECK(validate_crystal(a).empty());

  const Crystal b = synth_crystal(1, 1, 1, 24);
  CHECK(a.lattice.m == b.lattice.m);
  CHECK(a.coords == b.coords);
  CHECK(a.species.entries[0].atomic_number == b.species.entries[0].atomic_number);
}

TEST_CASE("synth_crystal seed sweep always validates") {
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const Crystal c = synth_crystal(seed, 6, 16, 48);
    CHECK(validate_crystal(c).empty());
  }
}

TEST_CASE("apply_symmetry: identity and pure translation") {
  Crystal c;
  c.grid_denominator = 24;
  c.species.entries.push_back({6, 1});
  c.coords.push_back({GridCoord{0, 0, 0}});

  const Crystal same = apply_symmetry(c, SymmetryOp{});
  CHECK(same.coords == c.coords);

  SymmetryOp shift;
  shift.translation_twelfths = {6, 0, 0};  // (1/2, 0, 0)
  const Crystal moved = apply_symmetry(c, shift);
  CHECK(moved.coords[0][0] == GridCoord{12, 0, 0});
}

TEST_CASE("apply_symmetry closure and grid coherence") {
  Rng rng(23);
  for (int trial = 0; trial < 50; ++trial) {
    const Crystal c = synth_crystal(100 + trial, 3, 6, trial % 2 == 0 ? 24 : 48);
    const SymmetryOp op = testing::random_symmetry_op(rng);
    const Crystal t = apply_symmetry(c, op);
    CHECK(validate_crystal(t).empty());
    for (size_t s = 0; s < t.coords.size(); ++s) {
      CHECK(t.coords[s].size() == c.coords[s].size());
    }
  }
}
