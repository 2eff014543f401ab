#include "recipcrystal/blocks.hpp"

#include <cmath>
#include <numbers>

#include "recipcrystal/errors.hpp"

namespace recip {

int BlockConfig::mlp_hidden() const {
  const int raw = static_cast<int>(std::lround(mlp_ratio * d_model));
  const int mult = std::max(1, (raw + d_head / 2) / d_head);
  return mult * d_head;
}

void BlockConfig::validate() const {
  if (d_head % 3 != 0) throw ConfigError("d_head must be divisible by 3");
  if (d_model != n_heads * d_head) throw ConfigError("d_model must equal n_heads * d_head");
  if (mlp_ratio <= 0.0) throw ConfigError("mlp_ratio must be positive");
}

std::vector<double> rope_base_freqs(int d_head, int jmax) {
  const int groups = d_head / 3;
  const double bpd = 2.0 * jmax + 1.0;
  const double ratio = std::pow(bpd, -3.0 / d_head);
  std::vector<double> freqs(groups);
  double f = 2.0 * std::numbers::pi / bpd;
  for (int j = 0; j < groups; ++j) {
    freqs[j] = f;
    f *= ratio;
  }
  return freqs;
}

Tensor rope_base_theta(const WaveTags& tags, int n_heads, int d_head, int jmax) {
  const int S = tags.size();
  const int groups = d_head / 3;
  const std::vector<double> freqs = rope_base_freqs(d_head, jmax);
  Tensor theta({S, n_heads, d_head});
  for (int s = 0; s < S; ++s) {
    if (!tags.tagged[s]) continue;
    const WaveVec& w = tags.wave[s];
    for (int h = 0; h < n_heads; ++h) {
      double* p = theta.data.data() + (static_cast<std::size_t>(s) * n_heads + h) * d_head;
      for (int d = 0; d < d_head; ++d) {
        const int axis = d / groups;
        const int fi = d % groups;
        p[d] = freqs[fi] * w[axis];
      }
    }
  }
  return theta;
}

Graph::Id complex_rmsnorm(Graph& g, Graph::Id x, Graph::Id w, Graph::Id b, double eps) {
  const int d_model = g.val(x).shape[g.val(x).ndim() - 2];
  Graph::Id sq = g.mul(x, x);
  Graph::Id msq = g.scale(g.row_sums(sq), 1.0 / d_model);  // mean |x|^2 over features
  Graph::Id inv = g.rsqrt(msq, eps);
  Graph::Id xn = g.scale_rows(x, inv);
  Graph::Id out = g.cmul_rows(xn, w);
  if (b >= 0) out = g.badd(out, b);
  return out;
}

Graph::Id attention_weights(Graph& g, Graph::Id q, Graph::Id k, int n_heads) {
  const Tensor& qv = g.val(q);
  const int S = qv.shape[0];
  const int d_model = qv.shape[1];
  const int d_head = d_model / n_heads;
  Graph::Id qh = g.reshape(q, {S, n_heads, d_head, 2});
  Graph::Id kh = g.reshape(k, {S, n_heads, d_head, 2});
  // Real/imag packing doubles the effective dot length, hence sqrt(2*d_head).
  const double scl = 1.0 / std::sqrt(2.0 * d_head);
  return g.softmax_lastdim(g.attn_scores(qh, kh, scl));
}

Graph::Id attention(Graph& g, Graph::Id q, Graph::Id k, Graph::Id v, int n_heads,
                    Graph::Id head_scale) {
  const Tensor& qv = g.val(q);
  const int S = qv.shape[0];
  const int d_model = qv.shape[1];
  const int d_head = d_model / n_heads;
  Graph::Id weights = attention_weights(g, q, k, n_heads);
  Graph::Id vh = g.reshape(v, {S, n_heads, d_head, 2});
  Graph::Id mixed = g.attn_mix(weights, vh);
  if (head_scale >= 0) mixed = g.scale_heads(mixed, head_scale);
  return g.reshape(mixed, {S, d_model, 2});
}

Graph::Id rope3d(Graph& g, Graph::Id x, int n_heads, const Tensor& base_theta,
                 Graph::Id offsets) {
  const Tensor& xv = g.val(x);
  const int S = xv.shape[0];
  const int d_model = xv.shape[1];
  const int d_head = d_model / n_heads;
  Graph::Id xh = g.reshape(x, {S, n_heads, d_head, 2});
  Graph::Id theta = g.leaf(base_theta, false);
  if (offsets >= 0) theta = g.badd(theta, offsets);
  Graph::Id rotated = g.phase_rotate(xh, theta);
  return g.reshape(rotated, {S, d_model, 2});
}

Graph::Id gated_mlp(Graph& g, Graph::Id x, const BlockConfig& cfg, const MlpIds& ids) {
  Graph::Id u = g.cmatmul(x, ids.wu);
  Graph::Id gated;
  if (cfg.modulus_gating) {
    // Real gate from the interleaved real view; multiplies channel magnitude
    // only, so relative phase is untouched.
    const Tensor& xv = g.val(x);
    Graph::Id x2d = g.reshape(x, {xv.shape[0], 2 * xv.shape[1]});
    Graph::Id gate = g.silu(g.matmul(x2d, ids.wg_real));
    gated = g.scale_channels(u, gate);
  } else {
    // SiLU acts independently on real and imaginary components of G.
    Graph::Id gate = g.silu(g.cmatmul(x, ids.wg));
    gated = g.mul(u, gate);
  }
  if (cfg.mlp_bias && ids.bias >= 0) gated = g.badd(gated, ids.bias);
  return g.cmatmul(gated, ids.wproj);
}

Graph::Id transformer_block(Graph& g, Graph::Id x, const BlockConfig& cfg,
                            const BlockIds& ids, const Tensor& base_theta) {
  Graph::Id n1 = complex_rmsnorm(g, x, ids.norm1_w, cfg.rms_bias ? ids.norm1_b : -1);
  Graph::Id q = rope3d(g, g.cmatmul(n1, ids.wq), cfg.n_heads, base_theta, ids.rope_off_q);
  Graph::Id k = rope3d(g, g.cmatmul(n1, ids.wk), cfg.n_heads, base_theta, ids.rope_off_k);
  Graph::Id v = g.cmatmul(n1, ids.wv);
  Graph::Id a = attention(g, q, k, v, cfg.n_heads, cfg.head_scale ? ids.head_scale : -1);
  Graph::Id y = g.add(x, g.cmatmul(a, ids.wo));
  Graph::Id n2 = complex_rmsnorm(g, y, ids.norm2_w, cfg.rms_bias ? ids.norm2_b : -1);
  return g.add(y, gated_mlp(g, n2, cfg, ids.mlp));
}

std::array<double, 3> quad_basis(double phi) {
  return {2.0 * (0.5 - phi) * (1.0 - phi), 4.0 * phi * (1.0 - phi),
          2.0 * phi * (phi - 0.5)};
}

Graph::Id quad_interp(Graph& g, Graph::Id t0, Graph::Id t1, Graph::Id t2, double phi) {
  const auto b = quad_basis(phi);
  return g.add(g.scale(t0, b[0]), g.add(g.scale(t1, b[1]), g.scale(t2, b[2])));
}

ParamResolver plain_resolver(const BoundParams& bp) {
  return [&bp](const std::string& name) { return bp(name); };
}

bool is_conditioned_tensor(const std::string& leaf_name) {
  return leaf_name == "norm1_b" || leaf_name == "norm2_b" || leaf_name == "mlp_b" ||
         leaf_name == "rope_off_q" || leaf_name == "rope_off_k" || leaf_name == "head_scale";
}

namespace {

// Register `name` directly, or as three control tensors when conditioned.
void add_maybe_quad(ParamStore& store, const std::string& name, const Tensor& init,
                    bool quad, const std::string& leaf) {
  if (quad && is_conditioned_tensor(leaf)) {
    store.add(name + ".0", init);
    store.add(name + ".1", init);
    store.add(name + ".2", init);
  } else {
    store.add(name, init);
  }
}

}  // namespace

void init_block_params(ParamStore& store, const std::string& prefix, const BlockConfig& cfg,
                       Rng& rng, bool quad_conditioned) {
  cfg.validate();
  const int D = cfg.d_model;
  const int M = cfg.mlp_hidden();
  auto cw = [&](int din, int dout) {
    return randn_tensor({din, dout, 2}, 1.0 / std::sqrt(2.0 * din), rng);
  };

  store.add(prefix + ".norm1_w", complex_const({D}, 1.0));
  if (cfg.rms_bias) {
    add_maybe_quad(store, prefix + ".norm1_b", Tensor({D, 2}), quad_conditioned, "norm1_b");
  }
  store.add(prefix + ".wq", cw(D, D));
  store.add(prefix + ".wk", cw(D, D));
  store.add(prefix + ".wv", cw(D, D));
  store.add(prefix + ".wo", cw(D, D));
  add_maybe_quad(store, prefix + ".rope_off_q", Tensor({cfg.n_heads, cfg.d_head}),
                 quad_conditioned, "rope_off_q");
  add_maybe_quad(store, prefix + ".rope_off_k", Tensor({cfg.n_heads, cfg.d_head}),
                 quad_conditioned, "rope_off_k");
  if (cfg.head_scale) {
    add_maybe_quad(store, prefix + ".head_scale", full_tensor({cfg.n_heads}, 1.0),
                   quad_conditioned, "head_scale");
  }
  store.add(prefix + ".norm2_w", complex_const({D}, 1.0));
  if (cfg.rms_bias) {
    add_maybe_quad(store, prefix + ".norm2_b", Tensor({D, 2}), quad_conditioned, "norm2_b");
  }
  store.add(prefix + ".mlp_wu", cw(D, M));
  if (cfg.modulus_gating) {
    store.add(prefix + ".mlp_wg_real", randn_tensor({2 * D, M}, 1.0 / std::sqrt(2.0 * D), rng));
  } else {
    store.add(prefix + ".mlp_wg", cw(D, M));
  }
  if (cfg.mlp_bias) {
    add_maybe_quad(store, prefix + ".mlp_b", Tensor({M, 2}), quad_conditioned, "mlp_b");
  }
  store.add(prefix + ".mlp_wproj", cw(M, D));
}

BlockIds resolve_block(const std::string& prefix, const BlockConfig& cfg,
                       const ParamResolver& resolve) {
  BlockIds ids;
  ids.norm1_w = resolve(prefix + ".norm1_w");
  if (cfg.rms_bias) ids.norm1_b = resolve(prefix + ".norm1_b");
  ids.wq = resolve(prefix + ".wq");
  ids.wk = resolve(prefix + ".wk");
  ids.wv = resolve(prefix + ".wv");
  ids.wo = resolve(prefix + ".wo");
  ids.rope_off_q = resolve(prefix + ".rope_off_q");
  ids.rope_off_k = resolve(prefix + ".rope_off_k");
  if (cfg.head_scale) ids.head_scale = resolve(prefix + ".head_scale");
  ids.norm2_w = resolve(prefix + ".norm2_w");
  if (cfg.rms_bias) ids.norm2_b = resolve(prefix + ".norm2_b");
  ids.mlp.wu = resolve(prefix + ".mlp_wu");
  if (cfg.modulus_gating) {
    ids.mlp.wg_real = resolve(prefix + ".mlp_wg_real");
  } else {
    ids.mlp.wg = resolve(prefix + ".mlp_wg");
  }
  if (cfg.mlp_bias) ids.mlp.bias = resolve(prefix + ".mlp_b");
  ids.mlp.wproj = resolve(prefix + ".mlp_wproj");
  return ids;
}

}  // namespace recip
