#include "recipcrystal/vae.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "recipcrystal/errors.hpp"

namespace recip {

int VaeConfig::n_waves() const {
  return build_wave_set(truncation, jmax).size();
}

void VaeConfig::validate() const {
  block.validate();
  if (n_layers < 1) throw ConfigError("n_layers must be >= 1");
  if (n_aux < 1) throw ConfigError("n_aux must be >= 1");
  if (jmax < 0) throw ConfigError("jmax must be >= 0");
  if (denominator <= 0 || denominator % 12 != 0) {
    throw ConfigError("denominator must be a positive multiple of 12");
  }
  if (d_enc < 1) throw ConfigError("d_enc must be >= 1");
}

SlotAssignment assign_slots(const SpeciesSet& species, Rng& rng, bool cyclic) {
  SlotAssignment sa;
  sa.n_species = static_cast<int>(species.entries.size());
  const int start = cyclic ? static_cast<int>(rng.uniform_int(0, kMaxSpecies - 1)) : 0;
  for (int i = 0; i < sa.n_species; ++i) {
    const int slot = (start + i) % kMaxSpecies;
    sa.species_to_slot[i] = slot;
    sa.slot_species[slot] = species.entries[i].atomic_number;
  }
  return sa;
}

PreparedSample prepare_sample(const Crystal& c, const WaveSet& ws,
                              const SlotAssignment& slots) {
  PreparedSample s;
  s.lattice_coeffs = lattice_to_log(c.lattice).coeffs;
  s.slot_species = slots.slot_species;
  const FourierRepr fr = fourier_forward(c, ws, slots.species_to_slot, slots.n_species);
  s.fourier = Tensor({ws.size(), kMaxSpecies, 2});
  for (int row = 0; row < ws.size(); ++row) {
    for (int slot = 0; slot < kMaxSpecies; ++slot) {
      s.fourier.set_cx(static_cast<std::size_t>(row) * kMaxSpecies + slot, fr.at(row, slot));
    }
  }
  return s;
}

VaeModel::VaeModel(VaeConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  wave_set_ = build_wave_set(cfg_.truncation, cfg_.jmax);
  Rng rng(seed);
  const int D = cfg_.block.d_model;
  const int T = cfg_.ladder_rows();
  const int global_in = kMaxSpecies * (1 + cfg_.d_enc);

  params_.add("embed.species_table",
              randn_tensor({kMaxAtomicNumber + 1, cfg_.d_enc}, 0.5, rng));
  params_.add("embed.global_w",
              randn_tensor({global_in, 2 * D}, 1.0 / std::sqrt(global_in), rng));
  params_.add("embed.global_b", Tensor({2 * D}));
  params_.add("embed.fourier_w",
              randn_tensor({kMaxSpecies, D, 2}, 1.0 / std::sqrt(2.0 * kMaxSpecies), rng));
  params_.add("embed.fourier_b", Tensor({D, 2}));
  params_.add("embed.aux_init", randn_tensor({cfg_.n_aux, D, 2}, 0.02, rng));
  for (int l = 0; l < cfg_.n_layers; ++l) {
    init_block_params(params_, "enc.block" + std::to_string(l), cfg_.block, rng);
  }
  params_.add("bottleneck.log_sigma", Tensor({T, D}));
  params_.add("bottleneck.mask", full_tensor({T, D}, 1.0));
  params_.add("dec.token_init", randn_tensor({cfg_.seq_len(), D, 2}, 0.02, rng));
  for (int l = 0; l < cfg_.n_layers; ++l) {
    init_block_params(params_, "dec.block" + std::to_string(l), cfg_.block, rng);
  }
  params_.add("heads.lattice_w", randn_tensor({2 * D, 6}, 1.0 / std::sqrt(2.0 * D), rng));
  params_.add("heads.lattice_b", Tensor({6}));
  params_.add("heads.species_w",
              randn_tensor({2 * D, kMaxSpecies * (kMaxAtomicNumber + 1)},
                           1.0 / std::sqrt(2.0 * D), rng));
  params_.add("heads.species_b", Tensor({kMaxSpecies * (kMaxAtomicNumber + 1)}));
  params_.add("heads.fourier_w",
              randn_tensor({D, kMaxSpecies, 2}, 1.0 / std::sqrt(2.0 * D), rng));
  params_.add("heads.fourier_b", Tensor({kMaxSpecies, 2}));

  selector_ = full_tensor({T, D}, 1.0);
}

int VaeModel::active_channels() const {
  int n = 0;
  for (double v : selector_.data) n += v != 0.0 ? 1 : 0;
  return n;
}

WaveTags VaeModel::encoder_tags() const {
  WaveTags tags;
  for (int i = 0; i < cfg_.n_aux + 1; ++i) tags.push_none();
  for (const WaveVec& w : wave_set_.vectors) tags.push_wave(w);
  return tags;
}

Graph::Id VaeModel::tokenize_g(Graph& g, const BoundParams& bp,
                               const PreparedSample& s) const {
  const int D = cfg_.block.d_model;
  // Aux tokens come straight from their trainable initial values.
  Graph::Id aux = bp("embed.aux_init");

  // Global token: 6 lattice coefficients followed by the 6 slot embeddings
  // (empty slots use row 0 of the embedding table).
  Tensor lat({6});
  std::copy(s.lattice_coeffs.begin(), s.lattice_coeffs.end(), lat.data.begin());
  Graph::Id lat_id = g.leaf(lat, false);
  std::vector<int> slot_idx(s.slot_species.begin(), s.slot_species.end());
  Graph::Id emb = g.gather_rows(bp("embed.species_table"), slot_idx);  // (6, d_enc)
  Graph::Id gvec = g.concat_rows({lat_id, g.reshape(emb, {kMaxSpecies * cfg_.d_enc})});
  Graph::Id gin = g.reshape(gvec, {1, kMaxSpecies * (1 + cfg_.d_enc)});
  Graph::Id gtok = g.badd(g.matmul(gin, bp("embed.global_w")), bp("embed.global_b"));
  gtok = g.reshape(gtok, {1, D, 2});  // 2*d_model real channels read as complex

  // Fourier tokens: one shared complex projection C^6 -> C^d_model.
  Graph::Id fin = g.leaf(s.fourier, false);
  Graph::Id ftok = g.badd(g.cmatmul(fin, bp("embed.fourier_w")), bp("embed.fourier_b"));

  return g.concat_rows({aux, gtok, ftok});
}

Graph::Id VaeModel::encode_g(Graph& g, const BoundParams& bp, Graph::Id tokens,
                             const WaveTags& tags) const {
  const Tensor theta = rope_base_theta(tags, cfg_.block.n_heads, cfg_.block.d_head, cfg_.jmax);
  ParamResolver resolve = plain_resolver(bp);
  Graph::Id x = tokens;
  std::vector<Graph::Id> ladder;
  for (int l = 0; l < cfg_.n_layers; ++l) {
    const BlockIds ids = resolve_block("enc.block" + std::to_string(l), cfg_.block, resolve);
    x = transformer_block(g, x, cfg_.block, ids, theta);
    ladder.push_back(g.slice_rows(x, 0, cfg_.n_aux));
  }
  return g.concat_rows(ladder);
}

Graph::Id VaeModel::masked_mu_g(Graph& g, const BoundParams& bp, Graph::Id ladder) const {
  Graph::Id masked = g.scale_channels(ladder, bp("bottleneck.mask"));
  return g.scale_channels(masked, g.leaf(selector_, false));
}

Graph::Id VaeModel::sample_latent_g(Graph& g, const BoundParams& bp, Graph::Id masked_mu,
                                    const Tensor& eps) const {
  Graph::Id sigma = g.exp_(bp("bottleneck.log_sigma"));
  Graph::Id noise = g.scale_channels(g.leaf(eps, false), sigma);
  noise = g.scale_channels(noise, g.leaf(selector_, false));
  return g.add(masked_mu, noise);
}

Graph::Id VaeModel::decode_tokens_g(Graph& g, const BoundParams& bp, Graph::Id latent) const {
  const WaveTags tags = decoder_tags();
  const Tensor theta = rope_base_theta(tags, cfg_.block.n_heads, cfg_.block.d_head, cfg_.jmax);
  ParamResolver resolve = plain_resolver(bp);
  Graph::Id x = bp("dec.token_init");
  for (int i = 1; i <= cfg_.n_layers; ++i) {
    // Ladder slice L+1-i (1-indexed) feeds decoder block i.
    const int slice_start = (cfg_.n_layers - i) * cfg_.n_aux;
    Graph::Id slice = g.slice_rows(latent, slice_start, cfg_.n_aux);
    x = g.add_to_rows(x, slice, 0);
    const BlockIds ids =
        resolve_block("dec.block" + std::to_string(i - 1), cfg_.block, resolve);
    x = transformer_block(g, x, cfg_.block, ids, theta);
  }
  return x;
}

VaeModel::HeadsIds VaeModel::heads_g(Graph& g, const BoundParams& bp,
                                     Graph::Id decoded) const {
  const int D = cfg_.block.d_model;
  HeadsIds out;
  Graph::Id gstate = g.reshape(g.slice_rows(decoded, cfg_.n_aux, 1), {1, 2 * D});
  out.lattice = g.reshape(
      g.badd(g.matmul(gstate, bp("heads.lattice_w")), bp("heads.lattice_b")), {6});
  out.species_logits = g.reshape(
      g.badd(g.matmul(gstate, bp("heads.species_w")), bp("heads.species_b")),
      {kMaxSpecies, kMaxAtomicNumber + 1});
  Graph::Id ftokens = g.slice_rows(decoded, cfg_.n_aux + 1, wave_set_.size());
  out.fourier = g.badd(g.cmatmul(ftokens, bp("heads.fourier_w")), bp("heads.fourier_b"));
  return out;
}

Graph::Id VaeModel::snr_penalty_g(Graph& g, const BoundParams& bp, Graph::Id masked_mu) const {
  Graph::Id mod = g.cmodulus(masked_mu);
  Graph::Id sigma = g.exp_(bp("bottleneck.log_sigma"));
  return g.mean_all(g.div(mod, sigma));
}

VaeModel::LossIds VaeModel::loss_g(Graph& g, const BoundParams& bp, const PreparedSample& s,
                                   const Tensor& eps) const {
  Graph::Id tokens = tokenize_g(g, bp, s);
  Graph::Id ladder = encode_g(g, bp, tokens, encoder_tags());
  Graph::Id mu = masked_mu_g(g, bp, ladder);
  Graph::Id z = sample_latent_g(g, bp, mu, eps);
  Graph::Id decoded = decode_tokens_g(g, bp, z);
  HeadsIds heads = heads_g(g, bp, decoded);

  LossIds loss;
  Tensor lat({6});
  std::copy(s.lattice_coeffs.begin(), s.lattice_coeffs.end(), lat.data.begin());
  Graph::Id dlat = g.sub(heads.lattice, g.leaf(lat, false));
  loss.lat = g.mean_all(g.mul(dlat, dlat));

  Graph::Id dfour = g.sub(heads.fourier, g.leaf(s.fourier, false));
  loss.four = g.scale(g.sum_all(g.mul(dfour, dfour)),
                      1.0 / (kMaxSpecies * wave_set_.size()));

  loss.rec = g.sqrt_(g.add(loss.lat, loss.four));

  std::vector<int> targets(s.slot_species.begin(), s.slot_species.end());
  loss.ce = g.cross_entropy_mean(heads.species_logits, targets);
  loss.mu = snr_penalty_g(g, bp, mu);

  loss.total = g.add(g.scale(loss.ce, cfg_.lambda_z),
                     g.add(loss.rec, g.scale(loss.mu, cfg_.lambda_mu)));
  return loss;
}

VaeModel::LossIds VaeModel::batch_loss_g(Graph& g, const BoundParams& bp,
                                         std::span<const PreparedSample> batch,
                                         std::span<const Tensor> eps) const {
  LossIds acc;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    LossIds one = loss_g(g, bp, batch[i], eps[i]);
    if (i == 0) {
      acc = one;
    } else {
      acc.total = g.add(acc.total, one.total);
      acc.ce = g.add(acc.ce, one.ce);
      acc.lat = g.add(acc.lat, one.lat);
      acc.four = g.add(acc.four, one.four);
      acc.rec = g.add(acc.rec, one.rec);
      acc.mu = g.add(acc.mu, one.mu);
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  acc.total = g.scale(acc.total, inv);
  acc.ce = g.scale(acc.ce, inv);
  acc.lat = g.scale(acc.lat, inv);
  acc.four = g.scale(acc.four, inv);
  acc.rec = g.scale(acc.rec, inv);
  acc.mu = g.scale(acc.mu, inv);
  return acc;
}

TokenSequence VaeModel::tokenize(const PreparedSample& s) const {
  Graph g;
  BoundParams bp = bind_params(g, params_);
  Graph::Id tokens = tokenize_g(g, bp, s);
  TokenSequence ts;
  ts.tokens = g.val(tokens);
  ts.tags = encoder_tags();
  ts.n_aux = cfg_.n_aux;
  return ts;
}

Tensor VaeModel::encode_ladder(const PreparedSample& s) const {
  Graph g;
  BoundParams bp = bind_params(g, params_);
  return g.val(encode_g(g, bp, tokenize_g(g, bp, s), encoder_tags()));
}

Tensor VaeModel::encode_masked_mu(const PreparedSample& s) const {
  Graph g;
  BoundParams bp = bind_params(g, params_);
  Graph::Id ladder = encode_g(g, bp, tokenize_g(g, bp, s), encoder_tags());
  return g.val(masked_mu_g(g, bp, ladder));
}

Tensor VaeModel::encode_from(const TokenSequence& ts) const {
  Graph g;
  BoundParams bp = bind_params(g, params_);
  Graph::Id tokens = g.leaf(ts.tokens, false);
  return g.val(encode_g(g, bp, tokens, ts.tags));
}

HeadsOutput VaeModel::decode(const Tensor& latent) const {
  Graph g;
  BoundParams bp = bind_params(g, params_);
  Graph::Id z = g.leaf(latent, false);
  HeadsIds ids = heads_g(g, bp, decode_tokens_g(g, bp, z));
  HeadsOutput out;
  const Tensor& lat = g.val(ids.lattice);
  std::copy_n(lat.data.begin(), 6, out.lattice_coeffs.begin());
  out.species_logits = g.val(ids.species_logits);
  out.fourier = g.val(ids.fourier);
  return out;
}

Tensor VaeModel::exp_sigma() const {
  Tensor t = params_.at("bottleneck.log_sigma");
  for (double& v : t.data) v = std::exp(v);
  return t;
}

Tensor VaeModel::fresh_eps(Rng& rng) const {
  Tensor eps({cfg_.ladder_rows(), cfg_.block.d_model, 2});
  for (double& v : eps.data) v = rng.normal();
  return eps;
}

int nnz_target_at(int full, int target, int step, int total_steps) {
  if (total_steps <= 0 || step >= total_steps) return target;
  const double t = static_cast<double>(step) / total_steps;
  const double frac = 0.5 * (1.0 + std::cos(std::numbers::pi * t));
  return target + static_cast<int>(std::lround((full - target) * frac));
}

int nnz_step(const Tensor& mask, Tensor& selector, int step, int total_steps,
             int target_nnz) {
  int active = 0;
  for (double v : selector.data) active += v != 0.0 ? 1 : 0;
  const int full = static_cast<int>(selector.numel());
  const int want = nnz_target_at(full, target_nnz, step, total_steps);
  if (active <= want) return 0;

  // Rank active channels by |mask| and irreversibly drop the smallest.
  std::vector<std::size_t> idx;
  idx.reserve(active);
  for (std::size_t i = 0; i < selector.numel(); ++i) {
    if (selector.data[i] != 0.0) idx.push_back(i);
  }
  const int n_drop = active - want;
  std::partial_sort(idx.begin(), idx.begin() + n_drop, idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      const double ma = std::abs(mask.data[a]);
                      const double mb = std::abs(mask.data[b]);
                      if (ma != mb) return ma < mb;
                      return a < b;
                    });
  for (int i = 0; i < n_drop; ++i) selector.data[idx[i]] = 0.0;
  return n_drop;
}

std::vector<TrainRecord> train_vae(VaeModel& model, const std::vector<Crystal>& corpus,
                                   const TrainConfig& tc, TrainState* state,
                                   const MetricsSink& sink) {
  if (corpus.empty()) throw EmptyCorpus("training corpus is empty");
  TrainState local;
  TrainState& st = state ? *state : local;
  if (!state || st.step == 0) {
    st.data_rng = Rng(tc.seed);
    st.noise_rng = Rng(tc.seed ^ 0x9e3779b97f4a7c15ULL);
  }
  const WaveSet& ws = model.wave_set();

  // Identity-order coefficients are reused across steps; slot permutations
  // only shuffle columns.
  std::vector<TrainRecord> trace;
  for (; st.step < tc.steps; ) {
    std::vector<PreparedSample> batch;
    std::vector<Tensor> eps;
    batch.reserve(tc.batch_size);
    for (int b = 0; b < tc.batch_size; ++b) {
      const auto& c = corpus[st.data_rng.uniform_int(0, static_cast<int>(corpus.size()) - 1)];
      const SlotAssignment slots =
          assign_slots(c.species, st.data_rng, model.config().cyclic_slots);
      batch.push_back(prepare_sample(c, ws, slots));
      eps.push_back(model.fresh_eps(st.noise_rng));
    }

    Graph g;
    BoundParams bp = bind_params(g, model.params());
    VaeModel::LossIds loss = model.batch_loss_g(g, bp, batch, eps);
    g.backward(loss.total);
    const std::vector<Tensor> grads = collect_grads(g, bp);

    const double lr = tc.lr.at(st.step);
    const double wd = st.step < tc.lr.warmup_steps ? tc.weight_decay : 0.0;
    st.adam.step(model.params(), grads, lr, wd);
    ++st.step;

    if (tc.nnz_target >= 0 && tc.nnz_steps > 0) {
      nnz_step(model.params().at("bottleneck.mask"), model.selector(), st.step,
               tc.nnz_steps, tc.nnz_target);
    }

    TrainRecord rec;
    rec.step = st.step;
    rec.total = g.val(loss.total).data[0];
    rec.ce = g.val(loss.ce).data[0];
    rec.lat = g.val(loss.lat).data[0];
    rec.four = g.val(loss.four).data[0];
    rec.rec = g.val(loss.rec).data[0];
    rec.mu = g.val(loss.mu).data[0];
    rec.lr = lr;
    rec.active_channels = model.active_channels();
    if (!std::isfinite(rec.total)) {
      throw DivergenceDetected("VAE loss became non-finite at step " +
                               std::to_string(st.step));
    }
    if (sink) sink(rec);
    trace.push_back(rec);
  }
  return trace;
}

}  // namespace recip
