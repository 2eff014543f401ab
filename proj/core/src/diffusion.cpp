#include "recipcrystal/diffusion.hpp"

#include <cmath>
#include <numbers>

#include "recipcrystal/errors.hpp"

namespace recip {

Tensor sample_radial_laplace(const Tensor& varpi, const Tensor& selector, Rng& rng) {
  std::vector<int> shape = varpi.shape;
  shape.push_back(2);
  Tensor out(shape);
  for (std::size_t c = 0; c < varpi.numel(); ++c) {
    // Draw unconditionally to keep the stream aligned across selector states.
    const double e1 = -std::log(1.0 - rng.uniform());
    const double e2 = -std::log(1.0 - rng.uniform());
    const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
    if (selector.data[c] == 0.0 || varpi.data[c] == 0.0) continue;
    const double r = varpi.data[c] * (e1 + e2);
    out.data[2 * c] = r * std::cos(theta);
    out.data[2 * c + 1] = r * std::sin(theta);
  }
  return out;
}

NoiseScales estimate_scales(const VaeModel& vae, const std::vector<Crystal>& corpus,
                            Rng& rng) {
  if (corpus.empty()) throw EmptyCorpus("cannot estimate noise scales from an empty corpus");
  const int T = vae.config().ladder_rows();
  const int D = vae.config().block.d_model;
  NoiseScales scales;
  scales.varpi = Tensor({T, D});
  for (const Crystal& c : corpus) {
    const SlotAssignment slots = assign_slots(c.species, rng, vae.config().cyclic_slots);
    const Tensor mu = vae.encode_masked_mu(prepare_sample(c, vae.wave_set(), slots));
    for (std::size_t ch = 0; ch < scales.varpi.numel(); ++ch) {
      scales.varpi.data[ch] += std::hypot(mu.data[2 * ch], mu.data[2 * ch + 1]);
    }
  }
  const double inv = 0.5 / static_cast<double>(corpus.size());
  const Tensor& sel = vae.selector();
  for (std::size_t ch = 0; ch < scales.varpi.numel(); ++ch) {
    scales.varpi.data[ch] = sel.data[ch] != 0.0 ? scales.varpi.data[ch] * inv : 0.0;
  }
  scales.frozen = true;
  return scales;
}

Tensor snr_ratio(const NoiseScales& scales, const Tensor& log_sigma, const Tensor& selector) {
  Tensor R(scales.varpi.shape);
  for (std::size_t ch = 0; ch < R.numel(); ++ch) {
    if (selector.data[ch] == 0.0) {
      R.data[ch] = 1.0;
      continue;
    }
    const double ratio = scales.varpi.data[ch] / std::exp(log_sigma.data[ch]);
    R.data[ch] = 3.0 * ratio * ratio;
  }
  return R;
}

double schedule_s2(double phi, double R) {
  if (R < 1e-12) return phi;  // lim_{R->0} ((1+R)^phi - 1)/R = phi
  const double s2 = std::expm1(phi * std::log1p(R)) / R;
  return std::clamp(s2, 0.0, 1.0);
}

ScheduleCoeffs schedule_coeffs(double phi, const Tensor& R) {
  ScheduleCoeffs sc;
  sc.c = Tensor(R.shape);
  sc.s = Tensor(R.shape);
  for (std::size_t ch = 0; ch < R.numel(); ++ch) {
    const double s2 = schedule_s2(phi, R.data[ch]);
    sc.s.data[ch] = std::sqrt(s2);
    sc.c.data[ch] = std::sqrt(1.0 - s2);
  }
  return sc;
}

CorruptResult corrupt(const Tensor& latent, double phi, const NoiseScales& scales,
                      const Tensor& R, const Tensor& selector, Rng& rng) {
  if (!scales.frozen) throw ScalesNotFrozen("noise scales must be frozen before corruption");
  CorruptResult out;
  out.state.phi = phi;
  out.state.coeffs = schedule_coeffs(phi, R);
  out.noise = sample_radial_laplace(scales.varpi, selector, rng);
  out.state.z_phi = Tensor(latent.shape);
  for (std::size_t ch = 0; ch < selector.numel(); ++ch) {
    if (selector.data[ch] == 0.0) continue;  // pruned channels never see noise
    const double c = out.state.coeffs.c.data[ch];
    const double s = out.state.coeffs.s.data[ch];
    out.state.z_phi.data[2 * ch] = c * latent.data[2 * ch] + s * out.noise.data[2 * ch];
    out.state.z_phi.data[2 * ch + 1] =
        c * latent.data[2 * ch + 1] + s * out.noise.data[2 * ch + 1];
  }
  return out;
}

void DiffusionConfig::validate() const {
  block.validate();
  if (n_layers < 1) throw ConfigError("diffuser n_layers must be >= 1");
  if (!(0.0 <= phi_min && phi_min < phi_max && phi_max <= 1.0)) {
    throw ConfigError("require 0 <= phi_min < phi_max <= 1");
  }
}

DiffuserModel::DiffuserModel(DiffusionConfig cfg, int ladder_rows, std::uint64_t seed)
    : cfg_(std::move(cfg)), ladder_rows_(ladder_rows) {
  cfg_.validate();
  const WaveSet ws = build_wave_set(cfg_.truncation, cfg_.jmax);
  n_scratch_ = cfg_.n_scratch > 0 ? cfg_.n_scratch : ws.size();
  for (int i = 0; i < ladder_rows_; ++i) tags_.push_none();
  for (int i = 0; i < n_scratch_; ++i) tags_.push_wave(ws.vectors[i % ws.size()]);

  Rng rng(seed);
  const int D = cfg_.block.d_model;
  params_.add("diff.token_init",
              randn_tensor({ladder_rows_ + n_scratch_, D, 2}, 0.02, rng));
  for (int l = 0; l < cfg_.n_layers; ++l) {
    init_block_params(params_, "diff.block" + std::to_string(l), cfg_.block, rng,
                      /*quad_conditioned=*/true);
  }
  params_.add("diff.out_w", randn_tensor({D, D, 2}, 1.0 / std::sqrt(2.0 * D), rng));
  params_.add("diff.out_b", Tensor({D, 2}));
}

Graph::Id DiffuserModel::predict_g(Graph& g, const BoundParams& bp, const Tensor& z_phi,
                                   double phi, const Tensor& selector) const {
  // Conditioned tensors are interpolated from their three control points at
  // this phi; everything else resolves to the plain parameter.
  ParamResolver resolve = [&](const std::string& name) -> Graph::Id {
    const std::string leaf = name.substr(name.rfind('.') + 1);
    if (is_conditioned_tensor(leaf)) {
      return quad_interp(g, bp(name + ".0"), bp(name + ".1"), bp(name + ".2"), phi);
    }
    return bp(name);
  };
  const Tensor theta =
      rope_base_theta(tags_, cfg_.block.n_heads, cfg_.block.d_head, cfg_.jmax);
  Graph::Id x = g.add_to_rows(bp("diff.token_init"), g.leaf(z_phi, false), 0);
  for (int l = 0; l < cfg_.n_layers; ++l) {
    const BlockIds ids = resolve_block("diff.block" + std::to_string(l), cfg_.block, resolve);
    x = transformer_block(g, x, cfg_.block, ids, theta);
  }
  Graph::Id lead = g.slice_rows(x, 0, ladder_rows_);
  Graph::Id pred = g.badd(g.cmatmul(lead, bp("diff.out_w")), bp("diff.out_b"));
  return g.scale_channels(pred, g.leaf(selector, false));
}

Tensor DiffuserModel::predict(const Tensor& z_phi, double phi, const Tensor& selector) const {
  Graph g;
  BoundParams bp = bind_params(g, params_);
  return g.val(predict_g(g, bp, z_phi, phi, selector));
}

namespace {

int active_count(const Tensor& selector) {
  int n = 0;
  for (double v : selector.data) n += v != 0.0 ? 1 : 0;
  return n;
}

Tensor inv_tau_masked(const Tensor& tau, const Tensor& selector) {
  Tensor inv(tau.shape);
  for (std::size_t ch = 0; ch < tau.numel(); ++ch) {
    inv.data[ch] = selector.data[ch] != 0.0 ? 1.0 / tau.data[ch] : 0.0;
  }
  return inv;
}

}  // namespace

Graph::Id diffusion_loss_g(Graph& g, Graph::Id pred, const Tensor& noise, const Tensor& tau,
                           const Tensor& selector) {
  const int n_active = active_count(selector);
  Graph::Id d = g.sub(pred, g.leaf(noise, false));
  Graph::Id dn = g.scale_channels(d, g.leaf(inv_tau_masked(tau, selector), false));
  Graph::Id ss = g.sum_all(g.mul(dn, dn));
  return g.sqrt_(g.scale(ss, 1.0 / (2.0 * std::max(1, n_active))));
}

double diffusion_loss(const Tensor& pred, const Tensor& noise, const Tensor& tau,
                      const Tensor& selector) {
  Graph g;
  Graph::Id p = g.leaf(pred, false);
  const Tensor inv = inv_tau_masked(tau, selector);
  Graph::Id d = g.sub(p, g.leaf(noise, false));
  Graph::Id dn = g.scale_channels(d, g.leaf(inv, false));
  Graph::Id ss = g.sum_all(g.mul(dn, dn));
  return std::sqrt(g.val(ss).data[0] / (2.0 * std::max(1, active_count(selector))));
}

int phi_bin(double phi) {
  if (phi < 0.2) return 0;
  if (phi < 0.4) return 1;
  if (phi < 0.6) return 2;
  if (phi < 0.8) return 3;
  return 4;
}

std::vector<DiffTrainRecord> train_diffuser(DiffuserModel& model, const VaeModel& vae,
                                            const NoiseScales& scales,
                                            const std::vector<Crystal>& corpus,
                                            const TrainConfig& tc, DiffTrainState* state,
                                            const DiffMetricsSink& sink) {
  if (corpus.empty()) throw EmptyCorpus("training corpus is empty");
  if (!scales.frozen) throw ScalesNotFrozen("freeze noise scales before diffusion training");
  DiffTrainState local;
  DiffTrainState& st = state ? *state : local;
  if (!state || st.step == 0) {
    st.data_rng = Rng(tc.seed);
    st.noise_rng = Rng(tc.seed ^ 0x517cc1b727220a95ULL);
  }
  const Tensor& selector = vae.selector();
  const Tensor tau = vae.exp_sigma();
  const Tensor R = snr_ratio(scales, vae.params().at("bottleneck.log_sigma"), selector);
  const int n_active = active_count(selector);
  const DiffusionConfig& dc = model.config();

  std::vector<DiffTrainRecord> trace;
  for (; st.step < tc.steps;) {
    const double shared_phi = st.data_rng.uniform(dc.phi_min, dc.phi_max);

    Graph g;
    BoundParams bp = bind_params(g, model.params());
    Graph::Id total_ss = -1;
    double signal_sq = 0.0;
    double mean_phi = 0.0;
    const Tensor inv_tau = inv_tau_masked(tau, selector);
    for (int b = 0; b < tc.batch_size; ++b) {
      const auto& c = corpus[st.data_rng.uniform_int(0, static_cast<int>(corpus.size()) - 1)];
      const SlotAssignment slots = assign_slots(c.species, st.data_rng, vae.config().cyclic_slots);
      const Tensor mu = vae.encode_masked_mu(prepare_sample(c, vae.wave_set(), slots));
      const double phi =
          dc.per_sample_phi ? st.data_rng.uniform(dc.phi_min, dc.phi_max) : shared_phi;
      mean_phi += phi / tc.batch_size;
      CorruptResult cr = corrupt(mu, phi, scales, R, selector, st.noise_rng);

      Graph::Id pred = model.predict_g(g, bp, cr.state.z_phi, phi, selector);
      Graph::Id d = g.sub(pred, g.leaf(cr.noise, false));
      Graph::Id dn = g.scale_channels(d, g.leaf(inv_tau, false));
      Graph::Id ss = g.sum_all(g.mul(dn, dn));
      total_ss = b == 0 ? ss : g.add(total_ss, ss);

      // One-shot signal reconstruction diagnostic (not optimized).
      const Tensor& pv = g.val(pred);
      for (std::size_t ch = 0; ch < selector.numel(); ++ch) {
        if (selector.data[ch] == 0.0) continue;
        const double cc = cr.state.coeffs.c.data[ch];
        const double sc = cr.state.coeffs.s.data[ch];
        for (int p = 0; p < 2; ++p) {
          const double mu_hat =
              (cr.state.z_phi.data[2 * ch + p] - sc * pv.data[2 * ch + p]) / cc;
          const double e = (mu_hat - mu.data[2 * ch + p]) / tau.data[ch];
          signal_sq += e * e;
        }
      }
    }
    Graph::Id loss =
        g.sqrt_(g.scale(total_ss, 1.0 / (2.0 * n_active * tc.batch_size)));
    g.backward(loss);
    const std::vector<Tensor> grads = collect_grads(g, bp);

    const double lr = tc.lr.at(st.step);
    const double wd = st.step < tc.lr.warmup_steps ? tc.weight_decay : 0.0;
    st.adam.step(model.params(), grads, lr, wd);
    ++st.step;

    DiffTrainRecord rec;
    rec.step = st.step;
    rec.loss = g.val(loss).data[0];
    rec.phi = mean_phi;
    rec.bin = phi_bin(mean_phi);
    rec.signal_rmse = std::sqrt(signal_sq / (2.0 * n_active * tc.batch_size));
    rec.lr = lr;
    if (!std::isfinite(rec.loss)) {
      throw DivergenceDetected("diffusion loss became non-finite at step " +
                               std::to_string(st.step));
    }
    if (sink) sink(rec);
    trace.push_back(rec);
  }
  return trace;
}

std::array<double, kPhiBins> bin_means(std::span<const DiffTrainRecord> records,
                                       std::size_t window) {
  std::array<double, kPhiBins> sums{};
  std::array<int, kPhiBins> counts{};
  const std::size_t start = window > 0 && window < records.size()
                                ? records.size() - window
                                : 0;
  for (std::size_t i = start; i < records.size(); ++i) {
    sums[records[i].bin] += records[i].loss;
    ++counts[records[i].bin];
  }
  for (int b = 0; b < kPhiBins; ++b) {
    sums[b] = counts[b] > 0 ? sums[b] / counts[b] : 0.0;
  }
  return sums;
}

Tensor generate_latent(const DenoiseFn& denoise, const NoiseScales& scales, const Tensor& R,
                       const Tensor& selector, int n_steps, double phi_min, double phi_max,
                       Rng& rng) {
  if (!scales.frozen) throw ScalesNotFrozen("noise scales must be frozen before sampling");
  if (n_steps < 1) throw Error("n_steps must be >= 1");
  std::vector<double> grid(n_steps);
  for (int i = 0; i < n_steps; ++i) {
    grid[i] = n_steps == 1
                  ? phi_max
                  : phi_max - (phi_max - phi_min) * i / (n_steps - 1);
  }

  // Start from pure noise: the phi_max mixture with zero signal content.
  ScheduleCoeffs sc = schedule_coeffs(grid[0], R);
  Tensor nu = sample_radial_laplace(scales.varpi, selector, rng);
  std::vector<int> shape = scales.varpi.shape;
  shape.push_back(2);
  Tensor z(shape);
  for (std::size_t ch = 0; ch < selector.numel(); ++ch) {
    if (selector.data[ch] == 0.0) continue;
    z.data[2 * ch] = sc.s.data[ch] * nu.data[2 * ch];
    z.data[2 * ch + 1] = sc.s.data[ch] * nu.data[2 * ch + 1];
  }

  Tensor mu_hat(shape);
  for (int i = 0; i < n_steps; ++i) {
    sc = schedule_coeffs(grid[i], R);
    const Tensor pred = denoise(z, grid[i]);
    for (std::size_t ch = 0; ch < selector.numel(); ++ch) {
      if (selector.data[ch] == 0.0) {
        mu_hat.data[2 * ch] = mu_hat.data[2 * ch + 1] = 0.0;
        continue;
      }
      for (int p = 0; p < 2; ++p) {
        mu_hat.data[2 * ch + p] =
            (z.data[2 * ch + p] - sc.s.data[ch] * pred.data[2 * ch + p]) / sc.c.data[ch];
      }
    }
    if (i + 1 == n_steps) break;
    const ScheduleCoeffs next = schedule_coeffs(grid[i + 1], R);
    const Tensor fresh = sample_radial_laplace(scales.varpi, selector, rng);
    for (std::size_t ch = 0; ch < selector.numel(); ++ch) {
      if (selector.data[ch] == 0.0) continue;
      for (int p = 0; p < 2; ++p) {
        z.data[2 * ch + p] =
            next.c.data[ch] * mu_hat.data[2 * ch + p] + next.s.data[ch] * fresh.data[2 * ch + p];
      }
    }
  }
  return mu_hat;
}

Tensor generate_latent(const DiffuserModel& model, const NoiseScales& scales,
                       const Tensor& R, const Tensor& selector, int n_steps, Rng& rng) {
  DenoiseFn fn = [&](const Tensor& z, double phi) { return model.predict(z, phi, selector); };
  return generate_latent(fn, scales, R, selector, n_steps, model.config().phi_min,
                         model.config().phi_max, rng);
}

}  // namespace recip
