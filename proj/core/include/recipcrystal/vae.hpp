#pragma once

#include <functional>
#include <optional>
#include <span>

#include "recipcrystal/blocks.hpp"
#include "recipcrystal/crystal.hpp"
#include "recipcrystal/fourier.hpp"
#include "recipcrystal/lattice.hpp"

namespace recip {

struct VaeConfig {
  BlockConfig block;
  int n_layers = 2;  // encoder depth L; decoder mirrors it
  int n_aux = 2;
  int jmax = 1;
  Truncation truncation = Truncation::cubic;
  int denominator = 24;
  int d_enc = 16;  // species embedding width
  double lambda_z = 1.0;
  double lambda_mu = 0.1;
  bool cyclic_slots = true;

  int n_waves() const;
  int seq_len() const { return n_aux + 1 + n_waves(); }
  int ladder_rows() const { return n_layers * n_aux; }
  void validate() const;
};

// Injective map of species (in atomic-number order) onto consecutive slots
// modulo six.
struct SlotAssignment {
  int n_species = 0;
  std::array<int, kMaxSpecies> species_to_slot{0, 1, 2, 3, 4, 5};
  std::array<int, kMaxSpecies> slot_species{0, 0, 0, 0, 0, 0};  // slot -> z, 0 empty
};

// cyclic=true picks a uniformly random start slot and wraps; cyclic=false is
// the identity placement from slot 0.
SlotAssignment assign_slots(const SpeciesSet& species, Rng& rng, bool cyclic);

// A crystal readied for the model: lattice log coefficients, slot-permuted
// Fourier matrix, and per-slot species targets.
struct PreparedSample {
  std::array<double, 6> lattice_coeffs{};
  std::array<int, kMaxSpecies> slot_species{0, 0, 0, 0, 0, 0};
  Tensor fourier;  // (|W|, 6, 2)
};

PreparedSample prepare_sample(const Crystal& c, const WaveSet& ws, const SlotAssignment& slots);

// Value-level token sequence (aux block, global token, Fourier tokens).
struct TokenSequence {
  Tensor tokens;  // (n_aux + 1 + |W|, d_model, 2)
  WaveTags tags;
  int n_aux = 0;
};

struct HeadsOutput {
  std::array<double, 6> lattice_coeffs{};
  Tensor species_logits;  // (6, 84); class 0 is "empty", class z is element z
  Tensor fourier;         // (|W|, 6, 2)
};

class VaeModel {
 public:
  VaeModel(VaeConfig cfg, std::uint64_t seed);

  const VaeConfig& config() const { return cfg_; }
  const WaveSet& wave_set() const { return wave_set_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  Tensor& selector() { return selector_; }
  const Tensor& selector() const { return selector_; }
  int active_channels() const;

  WaveTags encoder_tags() const;
  WaveTags decoder_tags() const { return encoder_tags(); }

  // --- graph-level forward pieces ---
  Graph::Id tokenize_g(Graph& g, const BoundParams& bp, const PreparedSample& s) const;
  // Runs L blocks over the full sequence, retaining the aux block after each:
  // returns the depth-aligned ladder (L*n_aux, d_model, 2).
  Graph::Id encode_g(Graph& g, const BoundParams& bp, Graph::Id tokens,
                     const WaveTags& tags) const;
  // mask (learned) and selector (frozen 0/1) applied multiplicatively.
  Graph::Id masked_mu_g(Graph& g, const BoundParams& bp, Graph::Id ladder) const;
  // z = mu + eps * exp(sigma) on active channels; pruned channels carry no noise.
  Graph::Id sample_latent_g(Graph& g, const BoundParams& bp, Graph::Id masked_mu,
                            const Tensor& eps) const;
  // Decoder from learned token constants with depth-matched reverse ladder
  // injection; returns final token states (seq_len, d_model, 2).
  Graph::Id decode_tokens_g(Graph& g, const BoundParams& bp, Graph::Id latent) const;

  struct HeadsIds {
    Graph::Id lattice = -1;         // (6)
    Graph::Id species_logits = -1;  // (6, 84)
    Graph::Id fourier = -1;         // (|W|, 6, 2)
  };
  HeadsIds heads_g(Graph& g, const BoundParams& bp, Graph::Id decoded) const;

  Graph::Id snr_penalty_g(Graph& g, const BoundParams& bp, Graph::Id masked_mu) const;

  struct LossIds {
    Graph::Id total = -1, ce = -1, lat = -1, four = -1, rec = -1, mu = -1;
  };
  LossIds loss_g(Graph& g, const BoundParams& bp, const PreparedSample& s,
                 const Tensor& eps) const;
  LossIds batch_loss_g(Graph& g, const BoundParams& bp, std::span<const PreparedSample> batch,
                       std::span<const Tensor> eps) const;

  // --- value-level helpers (no gradients) ---
  TokenSequence tokenize(const PreparedSample& s) const;
  Tensor encode_ladder(const PreparedSample& s) const;       // raw mu
  Tensor encode_masked_mu(const PreparedSample& s) const;    // mask+selector applied
  Tensor encode_from(const TokenSequence& ts) const;         // custom tokens/tags
  HeadsOutput decode(const Tensor& latent) const;
  Tensor exp_sigma() const;  // exp(log_sigma), shape (T, D)

  Tensor fresh_eps(Rng& rng) const;  // standard normal, (T, D, 2)

 private:
  VaeConfig cfg_;
  WaveSet wave_set_;
  ParamStore params_;
  Tensor selector_;  // (L*n_aux, d_model) of 0/1
};

// Cosine nnz annealing: current target count at `step` of `total_steps`,
// interpolating from `full` down to `target`.
int nnz_target_at(int full, int target, int step, int total_steps);

// Permanently deactivate the lowest-|mask| active channels until the count
// matches the schedule; returns the number pruned this call.
int nnz_step(const Tensor& mask, Tensor& selector, int step, int total_steps, int target_nnz);

struct TrainConfig {
  int steps = 200;
  int batch_size = 8;
  LrSchedule lr;
  double weight_decay = 1e-9;  // applied during warmup only
  int nnz_target = -1;         // <0 disables pruning
  int nnz_steps = 0;
  std::uint64_t seed = 1;
};

struct TrainRecord {
  int step = 0;
  double total = 0, ce = 0, lat = 0, four = 0, rec = 0, mu = 0;
  double lr = 0;
  int active_channels = 0;
};

struct TrainState {
  Adam adam;
  int step = 0;
  Rng data_rng;   // batch selection + slot assignment
  Rng noise_rng;  // reparameterization draws
};

using MetricsSink = std::function<void(const TrainRecord&)>;

std::vector<TrainRecord> train_vae(VaeModel& model, const std::vector<Crystal>& corpus,
                                   const TrainConfig& tc, TrainState* state = nullptr,
                                   const MetricsSink& sink = {});

}  // namespace recip
