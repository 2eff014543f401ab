#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "recipcrystal/fourier.hpp"
#include "recipcrystal/graph.hpp"
#include "recipcrystal/optim.hpp"

namespace recip {

// Complex transformer block configuration. d_head must be divisible by 3
// (one RoPE subspace per spatial axis) and d_model == n_heads * d_head.
struct BlockConfig {
  int d_model = 36;
  int n_heads = 3;
  int d_head = 12;
  double mlp_ratio = 8.0 / 3.0;
  bool rms_bias = false;
  bool head_scale = false;
  bool mlp_bias = false;
  bool modulus_gating = true;

  int mlp_hidden() const;
  void validate() const;
};

// Per-token positional tags: Fourier tokens carry their wave vector,
// auxiliary/global/ladder tokens carry none (zero base angle).
struct WaveTags {
  std::vector<WaveVec> wave;
  std::vector<std::uint8_t> tagged;

  int size() const { return static_cast<int>(wave.size()); }
  static WaveTags none(int n) {
    WaveTags t;
    t.wave.assign(n, WaveVec{0, 0, 0});
    t.tagged.assign(n, 0);
    return t;
  }
  void push_none() {
    wave.push_back({0, 0, 0});
    tagged.push_back(0);
  }
  void push_wave(const WaveVec& w) {
    wave.push_back(w);
    tagged.push_back(1);
  }
};

// Geometric frequency ladder, one frequency per channel of a d_head/3 axis
// group: freq_j = 2*pi/(2*jmax+1) * r^j with r = (2*jmax+1)^(-3/d_head).
// Every base angle across the retained band |w| <= jmax then stays below pi.
std::vector<double> rope_base_freqs(int d_head, int jmax);

// Base rotation angles (S, n_heads, d_head); identical across heads, the
// learned offsets provide per-head variation.
Tensor rope_base_theta(const WaveTags& tags, int n_heads, int d_head, int jmax);

// ---- graph-level primitives (inputs/outputs use the (S, d_model, 2) or
// documented shapes; gradients flow through every parameter id) ----

// x / sqrt(mean_feature(|x|^2) + eps) followed by complex affine w, b.
Graph::Id complex_rmsnorm(Graph& g, Graph::Id x, Graph::Id w, Graph::Id b = -1,
                          double eps = 1e-6);

// Real-score attention: softmax_j of Re(q_i . k_j^*) / sqrt(2*d_head), convex
// mixing of complex values, optional per-head output scaling.
Graph::Id attention(Graph& g, Graph::Id q, Graph::Id k, Graph::Id v, int n_heads,
                    Graph::Id head_scale = -1);

// Attention weights alone (H, S, S), for invariant checks.
Graph::Id attention_weights(Graph& g, Graph::Id q, Graph::Id k, int n_heads);

// Elementwise multiplication by exp(i * (base_theta + offsets)); offsets of
// shape (n_heads, d_head) broadcast over tokens, pass -1 for none.
Graph::Id rope3d(Graph& g, Graph::Id x, int n_heads, const Tensor& base_theta,
                 Graph::Id offsets = -1);

struct MlpIds {
  Graph::Id wu = -1;       // (D, M, 2)
  Graph::Id wg = -1;       // baseline gate: (D, M, 2)
  Graph::Id wg_real = -1;  // modulus gate: (2D, M)
  Graph::Id wproj = -1;    // (M, D, 2)
  Graph::Id bias = -1;     // post-gating (M, 2), used when cfg.mlp_bias
};

Graph::Id gated_mlp(Graph& g, Graph::Id x, const BlockConfig& cfg, const MlpIds& ids);

struct BlockIds {
  Graph::Id norm1_w = -1, norm1_b = -1;
  Graph::Id wq = -1, wk = -1, wv = -1, wo = -1;
  Graph::Id rope_off_q = -1, rope_off_k = -1;
  Graph::Id head_scale = -1;
  Graph::Id norm2_w = -1, norm2_b = -1;
  MlpIds mlp;
};

// Pre-norm residual block: Y = X + Attn(Norm(X)); Z = Y + MLP(Norm(Y)).
Graph::Id transformer_block(Graph& g, Graph::Id x, const BlockConfig& cfg,
                            const BlockIds& ids, const Tensor& base_theta);

// Quadratic interpolation between control tensors at phi = 0, 1/2, 1 with
// B0=2(0.5-phi)(1-phi), B1=4phi(1-phi), B2=2phi(phi-0.5).
Graph::Id quad_interp(Graph& g, Graph::Id t0, Graph::Id t1, Graph::Id t2, double phi);
std::array<double, 3> quad_basis(double phi);

// ---- parameter registration / binding ----

// Resolves a logical parameter name to a graph node; the diffuser overrides
// this to splice in quadratic phi-conditioning for selected tensors.
using ParamResolver = std::function<Graph::Id(const std::string&)>;

ParamResolver plain_resolver(const BoundParams& bp);

// Names of the per-block tensors that receive quadratic conditioning.
bool is_conditioned_tensor(const std::string& leaf_name);

void init_block_params(ParamStore& store, const std::string& prefix, const BlockConfig& cfg,
                       Rng& rng, bool quad_conditioned = false);

BlockIds resolve_block(const std::string& prefix, const BlockConfig& cfg,
                       const ParamResolver& resolve);

}  // namespace recip
