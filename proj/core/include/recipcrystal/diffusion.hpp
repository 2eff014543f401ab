#pragma once

#include "recipcrystal/vae.hpp"

namespace recip {

// Per-channel radial-Laplace scales, estimated from encoder outputs and
// frozen before any corruption happens. Pruned channels hold a 0 sentinel.
struct NoiseScales {
  Tensor varpi;  // (T, D)
  bool frozen = false;
};

// Radius ~ Gamma(2, varpi) drawn as varpi * (E1 + E2), phase uniform.
// Channels with selector 0 (or varpi 0) receive exactly zero noise.
Tensor sample_radial_laplace(const Tensor& varpi, const Tensor& selector, Rng& rng);

// varpi <- 0.5 * E[|mu|], accumulated over the corpus under the model's slot
// randomization; frozen on return.
NoiseScales estimate_scales(const VaeModel& vae, const std::vector<Crystal>& corpus,
                            Rng& rng);

// R = 3 (varpi / exp(sigma))^2 per channel; pruned channels get R = 1 as an
// inert placeholder (they never mix signal or noise).
Tensor snr_ratio(const NoiseScales& scales, const Tensor& log_sigma, const Tensor& selector);

// s^2 = ((1+R)^phi - 1)/R with the series limit s^2 -> phi as R -> 0.
double schedule_s2(double phi, double R);

struct ScheduleCoeffs {
  Tensor c, s;  // per channel, c^2 + s^2 = 1
};
ScheduleCoeffs schedule_coeffs(double phi, const Tensor& R);

struct DiffusionState {
  Tensor z_phi;  // (T, D, 2)
  double phi = 0.0;
  ScheduleCoeffs coeffs;
};

struct CorruptResult {
  DiffusionState state;
  Tensor noise;  // the injected radial-Laplace draw
};

// z_phi = c*mu + s*nu on active channels; pruned channels stay exactly zero.
// Throws ScalesNotFrozen unless the scales were frozen.
CorruptResult corrupt(const Tensor& latent, double phi, const NoiseScales& scales,
                      const Tensor& R, const Tensor& selector, Rng& rng);

struct DiffusionConfig {
  BlockConfig block;
  int n_layers = 2;
  int n_scratch = 0;  // 0 -> one scratch token per retained wave vector
  int jmax = 1;
  Truncation truncation = Truncation::cubic;
  double phi_min = 0.01;
  double phi_max = 0.99;
  bool per_sample_phi = false;

  void validate() const;
};

// Noise-prediction transformer over the corrupted ladder plus scratch-pad
// tokens. RMS biases, post-gating MLP biases, RoPE offsets, and head scales
// are conditioned on phi through quadratic interpolation.
class DiffuserModel {
 public:
  DiffuserModel(DiffusionConfig cfg, int ladder_rows, std::uint64_t seed);

  const DiffusionConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  int ladder_rows() const { return ladder_rows_; }
  int n_scratch() const { return n_scratch_; }

  Graph::Id predict_g(Graph& g, const BoundParams& bp, const Tensor& z_phi, double phi,
                      const Tensor& selector) const;
  Tensor predict(const Tensor& z_phi, double phi, const Tensor& selector) const;

 private:
  DiffusionConfig cfg_;
  int ladder_rows_ = 0;
  int n_scratch_ = 0;
  WaveTags tags_;
  ParamStore params_;
};

// RMS of the tau-normalized complex residual over active channels, counting
// real and imaginary parts as separate components.
double diffusion_loss(const Tensor& pred, const Tensor& noise, const Tensor& tau,
                      const Tensor& selector);
Graph::Id diffusion_loss_g(Graph& g, Graph::Id pred, const Tensor& noise, const Tensor& tau,
                           const Tensor& selector);

inline constexpr int kPhiBins = 5;
// Bin edges 0.01, 0.2, 0.4, 0.6, 0.8, 0.99.
int phi_bin(double phi);

struct DiffTrainRecord {
  int step = 0;
  double loss = 0.0;
  double phi = 0.0;
  int bin = 0;
  double signal_rmse = 0.0;  // diagnostic, tau-normalized, not optimized
  double lr = 0.0;
};

struct DiffTrainState {
  Adam adam;
  int step = 0;
  Rng data_rng;
  Rng noise_rng;
};

using DiffMetricsSink = std::function<void(const DiffTrainRecord&)>;

std::vector<DiffTrainRecord> train_diffuser(DiffuserModel& model, const VaeModel& vae,
                                            const NoiseScales& scales,
                                            const std::vector<Crystal>& corpus,
                                            const TrainConfig& tc,
                                            DiffTrainState* state = nullptr,
                                            const DiffMetricsSink& sink = {});

// Mean loss per phi bin over a trailing window of records.
std::array<double, kPhiBins> bin_means(std::span<const DiffTrainRecord> records,
                                       std::size_t window = 0);

using DenoiseFn = std::function<Tensor(const Tensor& z, double phi)>;

// Ancestral-style sampler: start from pure noise at phi_max, alternate
// noise prediction / signal reconstruction / re-corruption down a uniform
// phi grid, and return the final reconstruction at phi_min.
Tensor generate_latent(const DenoiseFn& denoise, const NoiseScales& scales, const Tensor& R,
                       const Tensor& selector, int n_steps, double phi_min, double phi_max,
                       Rng& rng);

Tensor generate_latent(const DiffuserModel& model, const NoiseScales& scales,
                       const Tensor& R, const Tensor& selector, int n_steps, Rng& rng);

}  // namespace recip
