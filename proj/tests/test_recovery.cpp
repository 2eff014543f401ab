#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "helpers.hpp"
#include "recipcrystal/errors.hpp"
#include "recipcrystal/recovery.hpp"

using namespace recip;

namespace {

std::vector<cdouble> column_of(const FourierRepr& fr, int slot) {
  std::vector<cdouble> col(fr.wave_set.size());
  for (int row = 0; row < fr.wave_set.size(); ++row) col[row] = fr.at(row, slot);
  return col;
}

bool same_sites(std::vector<GridCoord> a, std::vector<GridCoord> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  return a == b;
}

Crystal single_species(std::vector<GridCoord> sites, int denominator) {
  Crystal c;
  c.grid_denominator = denominator;
  c.species.entries.push_back({14, static_cast<int>(sites.size())});
  c.coords.push_back(std::move(sites));
  return c;
}

}  // namespace

TEST_CASE("density grid peaks and normalization") {
  const WaveSet ws = build_wave_set(Truncation::cubic, 4);
  const Crystal c = single_species({{0, 0, 0}}, 48);
  const FourierRepr fr = fourier_forward(c, ws);
  const DensityGrid rho = density_grid(column_of(fr, 0), ws, 48);
  // Dirichlet peak equals |W| at the atom position
  CHECK(rho.at(0, 0, 0) == doctest::Approx(729.0).epsilon(1e-12));
  for (int i = 1; i < 48 * 48 * 48; ++i) CHECK(rho.values[i] < 729.0);

  const std::vector<cdouble> zeros(ws.size(), cdouble{});
  const DensityGrid empty = density_grid(zeros, ws, 48);
  for (double v : empty.values) CHECK(v == 0.0);
}

TEST_CASE("separable density equals direct summation") {
  const WaveSet ws = build_wave_set(Truncation::cubic, 2);
  const Crystal c = synth_crystal(5, 1, 6, 24);
  const FourierRepr fr = fourier_forward(c, ws);
  const std::vector<cdouble> col = column_of(fr, 0);
  const DensityGrid fast = density_grid(col, ws, 24);

  // direct evaluation oracle
  const std::vector<cdouble> roots = unit_roots(24);
  for (int x1 = 0; x1 < 24; x1 += 5) {
    for (int x2 = 0; x2 < 24; x2 += 5) {
      for (int x3 = 0; x3 < 24; x3 += 5) {
        cdouble acc{};
        for (int row = 0; row < ws.size(); ++row) {
          const WaveVec& w = ws.vectors[row];
          long long dot = 1LL * w[0] * x1 + 1LL * w[1] * x2 + 1LL * w[2] * x3;
          dot %= 24;
          if (dot < 0) dot += 24;
          acc += col[row] * std::conj(roots[dot]);
        }
        CHECK(fast.at(x1, x2, x3) == doctest::Approx(acc.real()).epsilon(1e-10));
      }
    }
  }
}

TEST_CASE("spherical truncation uses the direct path") {
  const WaveSet ws = build_wave_set(Truncation::spherical, 2);
  const Crystal c = single_species({{0, 0, 0}, {12, 0, 0}}, 24);
  const FourierRepr fr = fourier_forward(c, ws);
  const StageResult s1 = stage1_peaks(column_of(fr, 0), ws, 2, 24);
  CHECK(s1.ok);
  CHECK(same_sites(s1.coords, c.coords[0]));
}

TEST_CASE("stage 1 recovers isolated and lattice-like configurations") {
  const WaveSet ws = build_wave_set(Truncation::cubic, 4);

  const Crystal one = single_species({{7, 13, 41}}, 48);
  StageResult r = stage1_peaks(column_of(fourier_forward(one, ws), 0), ws, 1, 48);
  CHECK(r.ok);
  CHECK(r.coords[0] == GridCoord{7, 13, 41});

  // 27-atom simple cubic arrangement: coordinates i/3 on the 48 grid
  std::vector<GridCoord> cubic;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      for (int k = 0; k < 3; ++k) cubic.push_back({16 * i, 16 * j, 16 * k});
    }
  }
  const Crystal sc = single_species(cubic, 48);
  r = stage1_peaks(column_of(fourier_forward(sc, ws), 0), ws, 27, 48);
  CHECK(r.ok);
  CHECK(same_sites(r.coords, sc.coords[0]));
}

TEST_CASE("adversarial cluster: stage 1 fails, later stages recover") {
  const WaveSet ws = build_wave_set(Truncation::cubic, 4);
  // Search deterministically over tight clusters until peak-shift breaks
  // stage 1; escalation must then succeed.
  Rng rng(77);
  bool found_failure = false;
  for (int trial = 0; trial < 200 && !found_failure; ++trial) {
    const int base = static_cast<int>(rng.uniform_int(0, 47));
    std::set<GridCoord> sites;
    sites.insert({base, base, base});
    while (static_cast<int>(sites.size()) < 4) {
      GridCoord g{static_cast<int>((base + rng.uniform_int(0, 2)) % 48),
                  static_cast<int>((base + rng.uniform_int(0, 2)) % 48),
                  static_cast<int>((base + rng.uniform_int(0, 2)) % 48)};
      sites.insert(g);
    }
    const Crystal c = single_species({sites.begin(), sites.end()}, 48);
    const std::vector<cdouble> col = column_of(fourier_forward(c, ws), 0);
    const int n = static_cast<int>(sites.size());
    const StageResult s1 = stage1_peaks(col, ws, n, 48);
    if (s1.ok) continue;
    found_failure = true;

    const StageResult s2 = stage2_greedy(col, ws, n, 48);
    bool recovered_by_2 = s2.ok && same_sites(s2.coords, c.coords[0]);
    bool recovered_by_3 = false;
    if (!recovered_by_2) {
      std::vector<std::array<double, 3>> init;
      for (const GridCoord& g : s2.coords) {
        init.push_back({g[0] / 48.0, g[1] / 48.0, g[2] / 48.0});
      }
      Stage3Options opts;
      opts.seed = 1;
      const Stage3Result s3 = stage3_newton(col, ws, init, 48, opts);
      recovered_by_3 = s3.ok && same_sites(s3.coords, c.coords[0]);
    }
    CHECK((recovered_by_2 || recovered_by_3));
  }
  CHECK(found_failure);
}

TEST_CASE("stage 2 handles the easy cases stage 1 handles") {
  const WaveSet ws = build_wave_set(Truncation::cubic, 3);
  for (std::uint64_t seed = 0; seed < 15; ++seed) {
    const Crystal c = synth_crystal(seed, 1, 10, 24);
    const std::vector<cdouble> col = column_of(fourier_forward(c, ws), 0);
    const int n = c.species.entries[0].count;
    const StageResult s1 = stage1_peaks(col, ws, n, 24);
    if (!s1.ok) continue;
    const StageResult s2 = stage2_greedy(col, ws, n, 24);
    CHECK(s2.ok);
    CHECK(same_sites(s2.coords, c.coords[0]));
  }

  const StageResult empty = stage2_greedy(std::vector<cdouble>(ws.size()), ws, 0, 24);
  CHECK(empty.ok);
  CHECK(empty.coords.empty());
}

TEST_CASE("stage 3 fixed point and basin of convergence") {
  const WaveSet ws = build_wave_set(Truncation::cubic, 4);
  const Crystal c = synth_crystal(9, 1, 8, 48);
  const std::vector<cdouble> col = column_of(fourier_forward(c, ws), 0);
  std::vector<std::array<double, 3>> exact;
  for (const GridCoord& g : c.coords[0]) {
    exact.push_back({g[0] / 48.0, g[1] / 48.0, g[2] / 48.0});
  }

  Stage3Options no_perturb;
  no_perturb.perturb = 0.0;
  Stage3Result r = stage3_newton(col, ws, exact, 48, no_perturb);
  CHECK(r.ok);
  CHECK(r.iters == 0);

  Stage3Options small;
  small.perturb = 1.0 / 192.0;
  small.seed = 3;
  r = stage3_newton(col, ws, exact, 48, small);
  CHECK(r.ok);
  CHECK(r.iters <= 3);
  CHECK(same_sites(r.coords, c.coords[0]));
}

TEST_CASE("stage 3 fails from unrelated random inits") {
  const WaveSet ws = build_wave_set(Truncation::cubic, 4);
  const Crystal c = synth_crystal(1234, 1, 8, 48);
  if (c.species.entries[0].count < 4) return;
  const std::vector<cdouble> col = column_of(fourier_forward(c, ws), 0);
  Rng rng(55);
  std::vector<std::array<double, 3>> random_init(c.coords[0].size());
  for (auto& f : random_init) f = {rng.uniform(), rng.uniform(), rng.uniform()};
  Stage3Options opts;
  opts.seed = 5;
  const Stage3Result r = stage3_newton(col, ws, random_init, 48, opts);
  CHECK_FALSE(r.ok);
  CHECK(r.iters == opts.max_iters);
}

TEST_CASE("full recovery roundtrip on a random corpus") {
  const WaveSet ws = build_wave_set(Truncation::cubic, 4);
  int stage_hist[4] = {0, 0, 0, 0};
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Crystal c = synth_crystal(seed, 6, 16, 48);
    const FourierRepr fr = fourier_forward(c, ws);
    const CrystalRecovery cr = recover(fr, 48);
    REQUIRE(cr.recoverable);
    ++stage_hist[static_cast<int>(cr.stage_reached)];
    for (size_t s = 0; s < c.species.entries.size(); ++s) {
      const RecoveryResult& rr = cr.slots[s];
      CHECK(static_cast<int>(rr.coords.size()) == c.species.entries[s].count);
      CHECK(same_sites(rr.coords, c.coords[s]));
    }
  }
  CHECK(stage_hist[0] == 0);
  CHECK(stage_hist[1] + stage_hist[2] + stage_hist[3] == 100);
}

TEST_CASE("empty species and non-integer multiplicities") {
  const WaveSet ws = build_wave_set(Truncation::cubic, 2);
  const Crystal c = single_species({{0, 0, 0}}, 24);
  FourierRepr fr = fourier_forward(c, ws);

  // a slot whose column is all zero with F0 = 0 recovers trivially as empty
  fr.slot_species[1] = 8;
  CrystalRecovery cr = recover(fr, 24);
  CHECK(cr.recoverable);
  CHECK(cr.counts[1] == 0);
  CHECK(cr.slots[1].coords.empty());

  fr.at(ws.zero_index(), 0) = cdouble{1.37, 0.0};
  CHECK_THROWS_AS(recover(fr, 24), NonIntegerMultiplicity);
}

TEST_CASE("stage monotonicity: later stages solve stage-1 instances directly") {
  const WaveSet ws = build_wave_set(Truncation::cubic, 3);
  for (std::uint64_t seed = 40; seed < 50; ++seed) {
    const Crystal c = synth_crystal(seed, 1, 6, 24);
    const std::vector<cdouble> col = column_of(fourier_forward(c, ws), 0);
    const int n = c.species.entries[0].count;
    const StageResult s1 = stage1_peaks(col, ws, n, 24);
    if (!s1.ok) continue;
    CHECK(stage2_greedy(col, ws, n, 24).ok);
    std::vector<std::array<double, 3>> init;
    for (const GridCoord& g : s1.coords) {
      init.push_back({g[0] / 24.0, g[1] / 24.0, g[2] / 24.0});
    }
    Stage3Options opts;
    opts.seed = seed;
    CHECK(stage3_newton(col, ws, init, 24, opts).ok);
  }
}

TEST_CASE("newton jacobian matches central finite differences") {
  const WaveSet ws = build_wave_set(Truncation::cubic, 2);
  Rng rng(66);
  std::vector<std::array<double, 3>> coords(3);
  for (auto& f : coords) f = {rng.uniform(), rng.uniform(), rng.uniform()};
  const Eigen::MatrixXd J = newton_jacobian(coords, ws);
  const int nw = ws.size();
  const double h = 1e-6;
  for (int a = 0; a < 3; ++a) {
    for (int axis = 0; axis < 3; ++axis) {
      auto up = coords, dn = coords;
      up[a][axis] += h;
      dn[a][axis] -= h;
      const auto fu = encode_continuous(up, ws);
      const auto fd = encode_continuous(dn, ws);
      for (int row = 0; row < nw; ++row) {
        const cdouble num = (fu[row] - fd[row]) / (2.0 * h);
        const double scale = std::max(1.0, std::abs(num));
        CHECK(std::abs(J(row, 3 * a + axis) - num.real()) <= 1e-5 * scale);
        CHECK(std::abs(J(nw + row, 3 * a + axis) - num.imag()) <= 1e-5 * scale);
      }
    }
  }
}
