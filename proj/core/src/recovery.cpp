#include "recipcrystal/recovery.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <set>

#include "recipcrystal/errors.hpp"
#include "recipcrystal/rng.hpp"

namespace recip {

namespace {

int positive_mod(long long v, int m) {
  long long r = v % m;
  if (r < 0) r += m;
  return static_cast<int>(r);
}

GridCoord unflatten(int idx, int gpd) {
  return {idx / (gpd * gpd), (idx / gpd) % gpd, idx % gpd};
}

// Index of the largest density value, smallest flat index on ties; points in
// `taken` are skipped so greedy peel-off never emits a duplicate site.
int argmax_density(const DensityGrid& rho, const std::set<int>* taken = nullptr) {
  int best = -1;
  double best_v = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < static_cast<int>(rho.values.size()); ++i) {
    if (taken && taken->count(i)) continue;
    if (rho.values[i] > best_v) {
      best_v = rho.values[i];
      best = i;
    }
  }
  return best;
}

DensityGrid density_direct(std::span<const cdouble> column, const WaveSet& ws, int gpd) {
  DensityGrid rho;
  rho.gpd = gpd;
  rho.values.assign(static_cast<size_t>(gpd) * gpd * gpd, 0.0);
  const std::vector<cdouble> roots = unit_roots(gpd);  // exp(-2 pi i k/g)
  size_t idx = 0;
  for (int x1 = 0; x1 < gpd; ++x1) {
    for (int x2 = 0; x2 < gpd; ++x2) {
      for (int x3 = 0; x3 < gpd; ++x3, ++idx) {
        double acc = 0.0;
        for (int row = 0; row < ws.size(); ++row) {
          const WaveVec& w = ws.vectors[row];
          const long long dot = 1LL * w[0] * x1 + 1LL * w[1] * x2 + 1LL * w[2] * x3;
          // exp(+2 pi i dot/g) = conj(roots[dot mod g])
          const cdouble e = std::conj(roots[positive_mod(dot, gpd)]);
          acc += column[row].real() * e.real() - column[row].imag() * e.imag();
        }
        rho.values[idx] = acc;
      }
    }
  }
  return rho;
}

// Cubic truncation: factor the 3D sum into three 1D passes. Mathematically
// identical to the direct sum, ~bpd^2/3 times fewer operations.
DensityGrid density_separable(std::span<const cdouble> column, const WaveSet& ws, int gpd) {
  const int j = ws.jmax;
  const int bpd = 2 * j + 1;
  const std::vector<cdouble> roots = unit_roots(gpd);
  auto phase = [&](int w, int x) {  // exp(+2 pi i w x / g)
    return std::conj(roots[positive_mod(1LL * w * x, gpd)]);
  };

  // A[w1][w2][x3] = sum_w3 C[w1][w2][w3] phase(w3, x3)
  std::vector<cdouble> A(static_cast<size_t>(bpd) * bpd * gpd, cdouble{});
  for (int a = 0; a < bpd; ++a) {
    for (int b = 0; b < bpd; ++b) {
      const cdouble* src = column.data() + (static_cast<size_t>(a) * bpd + b) * bpd;
      cdouble* dst = A.data() + (static_cast<size_t>(a) * bpd + b) * gpd;
      for (int x3 = 0; x3 < gpd; ++x3) {
        cdouble acc{};
        for (int cw = 0; cw < bpd; ++cw) acc += src[cw] * phase(cw - j, x3);
        dst[x3] = acc;
      }
    }
  }
  // B[w1][x2][x3] = sum_w2 A[w1][w2][x3] phase(w2, x2)
  std::vector<cdouble> B(static_cast<size_t>(bpd) * gpd * gpd, cdouble{});
  for (int a = 0; a < bpd; ++a) {
    for (int x2 = 0; x2 < gpd; ++x2) {
      for (int x3 = 0; x3 < gpd; ++x3) {
        cdouble acc{};
        for (int b = 0; b < bpd; ++b) {
          acc += A[(static_cast<size_t>(a) * bpd + b) * gpd + x3] * phase(b - j, x2);
        }
        B[(static_cast<size_t>(a) * gpd + x2) * gpd + x3] = acc;
      }
    }
  }
  // rho[x1][x2][x3] = Re sum_w1 B[w1][x2][x3] phase(w1, x1)
  DensityGrid rho;
  rho.gpd = gpd;
  rho.values.assign(static_cast<size_t>(gpd) * gpd * gpd, 0.0);
  for (int x1 = 0; x1 < gpd; ++x1) {
    for (int a = 0; a < bpd; ++a) {
      const cdouble e = phase(a - j, x1);
      const cdouble* src = B.data() + static_cast<size_t>(a) * gpd * gpd;
      double* dst = rho.values.data() + static_cast<size_t>(x1) * gpd * gpd;
      for (int i = 0; i < gpd * gpd; ++i) {
        dst[i] += src[i].real() * e.real() - src[i].imag() * e.imag();
      }
    }
  }
  return rho;
}

std::vector<GridCoord> top_n_points(const DensityGrid& rho, int n) {
  std::vector<int> idx(rho.values.size());
  std::iota(idx.begin(), idx.end(), 0);
  auto better = [&](int a, int b) {
    if (rho.values[a] != rho.values[b]) return rho.values[a] > rho.values[b];
    return a < b;
  };
  std::partial_sort(idx.begin(), idx.begin() + n, idx.end(), better);
  std::vector<GridCoord> coords;
  coords.reserve(n);
  for (int i = 0; i < n; ++i) coords.push_back(unflatten(idx[i], rho.gpd));
  return coords;
}

}  // namespace

DensityGrid density_grid(std::span<const cdouble> column, const WaveSet& ws, int gpd) {
  if (gpd < 2 * ws.jmax + 1) {
    throw Error("density grid must satisfy gpd >= 2*jmax+1");
  }
  if (ws.truncation == Truncation::cubic) return density_separable(column, ws, gpd);
  return density_direct(column, ws, gpd);
}

std::vector<cdouble> encode_continuous(const std::vector<std::array<double, 3>>& coords,
                                       const WaveSet& ws) {
  std::vector<cdouble> out(ws.size(), cdouble{});
  constexpr double two_pi = 2.0 * std::numbers::pi;
  for (int row = 0; row < ws.size(); ++row) {
    const WaveVec& w = ws.vectors[row];
    cdouble acc{};
    for (const auto& f : coords) {
      const double ang = -two_pi * (w[0] * f[0] + w[1] * f[1] + w[2] * f[2]);
      acc += cdouble{std::cos(ang), std::sin(ang)};
    }
    out[row] = acc;
  }
  return out;
}

Eigen::MatrixXd newton_jacobian(const std::vector<std::array<double, 3>>& coords,
                                const WaveSet& ws) {
  const int nw = ws.size();
  const int n = static_cast<int>(coords.size());
  constexpr double two_pi = 2.0 * std::numbers::pi;
  Eigen::MatrixXd A(2 * nw, 3 * n);
  for (int row = 0; row < nw; ++row) {
    const WaveVec& w = ws.vectors[row];
    for (int a = 0; a < n; ++a) {
      const double ang =
          -two_pi * (w[0] * coords[a][0] + w[1] * coords[a][1] + w[2] * coords[a][2]);
      const cdouble e{std::cos(ang), std::sin(ang)};
      for (int axis = 0; axis < 3; ++axis) {
        const cdouble d = cdouble{0.0, -two_pi * w[axis]} * e;
        A(row, 3 * a + axis) = d.real();
        A(nw + row, 3 * a + axis) = d.imag();
      }
    }
  }
  return A;
}

std::vector<cdouble> encode_column(const std::vector<GridCoord>& coords, const WaveSet& ws,
                                   int gpd) {
  std::vector<cdouble> out(ws.size(), cdouble{});
  const std::vector<cdouble> roots = unit_roots(gpd);
  for (int row = 0; row < ws.size(); ++row) {
    const WaveVec& w = ws.vectors[row];
    cdouble acc{};
    for (const GridCoord& f : coords) {
      const long long dot = 1LL * w[0] * f[0] + 1LL * w[1] * f[1] + 1LL * w[2] * f[2];
      acc += roots[positive_mod(dot, gpd)];
    }
    out[row] = acc;
  }
  return out;
}

double max_abs_diff(std::span<const cdouble> a, std::span<const cdouble> b) {
  double worst = 0.0;
  for (size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

StageResult stage1_peaks(std::span<const cdouble> column, const WaveSet& ws, int n, int gpd,
                         double verify_tol) {
  StageResult res;
  if (n == 0) {
    res.ok = true;
    return res;
  }
  const DensityGrid rho = density_grid(column, ws, gpd);
  res.coords = top_n_points(rho, n);
  res.residual = max_abs_diff(encode_column(res.coords, ws, gpd), column);
  res.ok = res.residual <= verify_tol;
  return res;
}

StageResult stage2_greedy(std::span<const cdouble> column, const WaveSet& ws, int n, int gpd,
                          double verify_tol) {
  StageResult res;
  if (n == 0) {
    res.ok = true;
    return res;
  }
  std::vector<cdouble> work(column.begin(), column.end());
  const std::vector<cdouble> roots = unit_roots(gpd);
  std::set<int> taken;
  bool plausible = true;
  for (int a = 0; a < n; ++a) {
    const DensityGrid rho = density_grid(work, ws, gpd);
    const int pick = argmax_density(rho, &taken);
    if (pick < 0) {
      plausible = false;
      break;
    }
    if (rho.values[pick] < 0.5) plausible = false;  // no plausible atom remains
    taken.insert(pick);
    const GridCoord f = unflatten(pick, gpd);
    res.coords.push_back(f);
    for (int row = 0; row < ws.size(); ++row) {
      const WaveVec& w = ws.vectors[row];
      const long long dot = 1LL * w[0] * f[0] + 1LL * w[1] * f[1] + 1LL * w[2] * f[2];
      work[row] -= roots[positive_mod(dot, gpd)];
    }
  }
  if (static_cast<int>(res.coords.size()) == n) {
    res.residual = max_abs_diff(encode_column(res.coords, ws, gpd), column);
    res.ok = plausible && res.residual <= verify_tol;
  }
  return res;
}

Stage3Result stage3_newton(std::span<const cdouble> column, const WaveSet& ws,
                           const std::vector<std::array<double, 3>>& init_coords, int gpd,
                           const Stage3Options& opts) {
  Stage3Result res;
  const int n = static_cast<int>(init_coords.size());
  if (n == 0) {
    res.ok = true;
    return res;
  }
  const int nw = ws.size();

  std::vector<std::array<double, 3>> u = init_coords;
  const double half_width = opts.perturb < 0.0 ? 1.0 / (4.0 * gpd) : opts.perturb;
  if (half_width > 0.0) {
    Rng rng(opts.seed);
    for (auto& f : u) {
      for (double& v : f) v += rng.uniform(-half_width, half_width);
    }
  }

  bool converged = false;
  for (int iter = 0; iter <= opts.max_iters; ++iter) {
    const std::vector<cdouble> fu = encode_continuous(u, ws);
    std::vector<cdouble> resid(nw);
    double worst = 0.0;
    for (int i = 0; i < nw; ++i) {
      resid[i] = fu[i] - column[i];
      worst = std::max(worst, std::abs(resid[i]));
    }
    res.residual = worst;
    res.iters = iter;
    if (worst <= opts.newton_tol) {
      converged = true;
      break;
    }
    if (iter == opts.max_iters) break;

    // Stacked real system: rows [Re F; Im F], columns = flattened coordinates.
    const Eigen::MatrixXd A = newton_jacobian(u, ws);
    Eigen::VectorXd b(2 * nw);
    for (int row = 0; row < nw; ++row) {
      b(row) = resid[row].real();
      b(nw + row) = resid[row].imag();
    }
    Eigen::BDCSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd delta = svd.solve(b);
    for (int a = 0; a < n; ++a) {
      for (int axis = 0; axis < 3; ++axis) u[a][axis] -= delta(3 * a + axis);
    }
  }
  if (!converged) return res;

  // Snap to the grid and confirm the exact roundtrip.
  std::set<GridCoord> seen;
  std::vector<GridCoord> snapped;
  snapped.reserve(n);
  for (const auto& f : u) {
    GridCoord g;
    for (int i = 0; i < 3; ++i) g[i] = positive_mod(std::llround(f[i] * gpd), gpd);
    if (!seen.insert(g).second) return res;  // coincident sites: not a valid crystal
    snapped.push_back(g);
  }
  const double post = max_abs_diff(encode_column(snapped, ws, gpd), column);
  if (post > opts.verify_tol) return res;
  res.ok = true;
  res.coords = std::move(snapped);
  res.residual = post;
  return res;
}

RecoveryResult recover_column(std::span<const cdouble> column, const WaveSet& ws, int n,
                              int gpd, const RecoverOptions& opts) {
  RecoveryResult out;
  StageResult s1 = stage1_peaks(column, ws, n, gpd, opts.verify_tol);
  if (s1.ok) {
    out.stage = RecoveryStage::stage1;
    out.coords = std::move(s1.coords);
    out.residual = s1.residual;
    return out;
  }
  StageResult s2 = stage2_greedy(column, ws, n, gpd, opts.verify_tol);
  if (s2.ok) {
    out.stage = RecoveryStage::stage2;
    out.coords = std::move(s2.coords);
    out.residual = s2.residual;
    return out;
  }
  // Hand stage 3 the best-effort stage-2 points (falling back to stage 1's).
  const std::vector<GridCoord>& init_grid =
      static_cast<int>(s2.coords.size()) == n ? s2.coords : s1.coords;
  std::vector<std::array<double, 3>> init;
  init.reserve(n);
  for (const GridCoord& g : init_grid) {
    init.push_back({static_cast<double>(g[0]) / gpd, static_cast<double>(g[1]) / gpd,
                    static_cast<double>(g[2]) / gpd});
  }
  Stage3Options s3o = opts.stage3;
  s3o.verify_tol = opts.verify_tol;
  Stage3Result s3 = stage3_newton(column, ws, init, gpd, s3o);
  out.newton_iters = s3.iters;
  out.residual = s3.residual;
  if (s3.ok) {
    out.stage = RecoveryStage::stage3;
    out.coords = std::move(s3.coords);
  }
  return out;
}

CrystalRecovery recover(const FourierRepr& fr, int gpd, const RecoverOptions& opts) {
  CrystalRecovery out;
  const int nw = fr.wave_set.size();
  const int zero_row = fr.wave_set.zero_index();
  bool all_ok = true;
  int deepest = 0;
  for (int slot = 0; slot < kMaxSpecies; ++slot) {
    if (fr.slot_species[slot] == 0) continue;
    std::vector<cdouble> column(nw);
    for (int row = 0; row < nw; ++row) column[row] = fr.at(row, slot);

    int n = 0;
    if (opts.counts) {
      n = (*opts.counts)[slot];
    } else {
      const double f0 = column[zero_row].real();
      n = static_cast<int>(std::llround(f0));
      if (opts.strict_counts && (n < 0 || std::abs(f0 - n) > 1e-6)) {
        throw NonIntegerMultiplicity("F0 of slot " + std::to_string(slot) +
                                     " is not a non-negative integer: " + std::to_string(f0));
      }
      if (n < 0) n = 0;
    }
    out.counts[slot] = n;
    out.slots[slot] = recover_column(column, fr.wave_set, n, gpd, opts);
    const RecoveryResult& r = out.slots[slot];
    if (r.stage == RecoveryStage::failed) {
      all_ok = false;
    } else {
      deepest = std::max(deepest, static_cast<int>(r.stage));
    }
    out.newton_iters += r.newton_iters;
    out.residual = std::max(out.residual, r.residual);
  }
  out.recoverable = all_ok;
  out.stage_reached = all_ok ? static_cast<RecoveryStage>(std::max(deepest, 1))
                             : RecoveryStage::failed;
  return out;
}

}  // namespace recip
