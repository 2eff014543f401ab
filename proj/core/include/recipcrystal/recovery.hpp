#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "recipcrystal/fourier.hpp"

namespace recip {

// Real atomic density evaluated on the gpd^3 fractional grid, flattened in
// lexicographic (x1, x2, x3) order.
struct DensityGrid {
  int gpd = 0;
  std::vector<double> values;

  double at(int x1, int x2, int x3) const {
    return values[(static_cast<size_t>(x1) * gpd + x2) * gpd + x3];
  }
};

// rho(x) = Re sum_w F_w exp(2*pi*i * w . x / gpd). Cubic truncations use a
// separable factorization (one axis at a time); other truncations fall back
// to direct summation.
DensityGrid density_grid(std::span<const cdouble> column, const WaveSet& ws, int gpd);

enum class RecoveryStage { stage1 = 1, stage2 = 2, stage3 = 3, failed = 0 };

struct RecoveryResult {
  RecoveryStage stage = RecoveryStage::failed;
  std::vector<GridCoord> coords;
  int newton_iters = 0;
  double residual = 0.0;
};

struct StageResult {
  bool ok = false;
  std::vector<GridCoord> coords;
  double residual = 0.0;
};

// Stage 1: take the n grid points of largest density (ties broken by
// lexicographic grid index) and accept iff re-encoding reproduces the input
// within verify_tol (max-abs).
StageResult stage1_peaks(std::span<const cdouble> column, const WaveSet& ws, int n, int gpd,
                         double verify_tol = 1e-6);

// Stage 2: greedy peel-off. Pick the argmax, subtract its unit-occupancy
// Fourier contribution, recompute, repeat n times. Fails when an iteration's
// maximum density drops below 0.5 or the final roundtrip misses verify_tol;
// the (best-effort) coordinate list is still filled so stage 3 has an init.
StageResult stage2_greedy(std::span<const cdouble> column, const WaveSet& ws, int n, int gpd,
                          double verify_tol = 1e-6);

struct Stage3Options {
  int max_iters = 10;
  // Uniform perturbation half-width per component; negative selects the
  // default 1/(4*gpd). Zero disables perturbation.
  double perturb = -1.0;
  std::uint64_t seed = 0;
  double newton_tol = 1e-8;  // pre-snap max-abs Fourier residual
  double verify_tol = 1e-6;  // post-snap roundtrip tolerance
};

struct Stage3Result {
  bool ok = false;
  std::vector<GridCoord> coords;
  int iters = 0;
  double residual = 0.0;
};

// Stage 3: joint Newton least-squares refinement of all coordinates of one
// species via the stacked real/imaginary SVD pseudoinverse, followed by grid
// snapping and roundtrip verification.
Stage3Result stage3_newton(std::span<const cdouble> column, const WaveSet& ws,
                           const std::vector<std::array<double, 3>>& init_coords, int gpd,
                           const Stage3Options& opts = {});

struct RecoverOptions {
  double verify_tol = 1e-6;
  Stage3Options stage3;
  // When set, per-slot atom counts are taken from here instead of the
  // zero-frequency coefficients (used by the sampling pipeline, where
  // predicted F0 values are rounded before recovery).
  std::optional<std::array<int, kMaxSpecies>> counts;
  // Strict mode requires Re(F0) within 1e-6 of a non-negative integer.
  bool strict_counts = true;
};

// Per-slot recovery: stage 1 -> stage 2 -> stage 3 (seeded from stage 2's
// best-effort coordinates). Throws NonIntegerMultiplicity in strict mode.
RecoveryResult recover_column(std::span<const cdouble> column, const WaveSet& ws, int n,
                              int gpd, const RecoverOptions& opts = {});

struct CrystalRecovery {
  std::array<RecoveryResult, kMaxSpecies> slots;
  std::array<int, kMaxSpecies> counts{0, 0, 0, 0, 0, 0};
  bool recoverable = false;
  RecoveryStage stage_reached = RecoveryStage::failed;  // deepest stage used
  int newton_iters = 0;
  double residual = 0.0;
};

CrystalRecovery recover(const FourierRepr& fr, int gpd, const RecoverOptions& opts = {});

// Exact re-encoding of on-grid coordinates (same phase tables the forward
// transform uses), handy for roundtrip checks.
std::vector<cdouble> encode_column(const std::vector<GridCoord>& coords, const WaveSet& ws,
                                   int gpd);

// Truncated Fourier coefficients of arbitrary (off-grid) coordinates.
std::vector<cdouble> encode_continuous(const std::vector<std::array<double, 3>>& coords,
                                       const WaveSet& ws);

// Stacked real Jacobian [Re D; Im D] of encode_continuous, with columns in
// flattened (atom, axis) order: dF_w/df_a = -2*pi*i * w * exp(-2*pi*i w.f_a).
Eigen::MatrixXd newton_jacobian(const std::vector<std::array<double, 3>>& coords,
                                const WaveSet& ws);

double max_abs_diff(std::span<const cdouble> a, std::span<const cdouble> b);

}  // namespace recip
