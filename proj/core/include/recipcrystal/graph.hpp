#pragma once

#include <functional>
#include <vector>

#include "recipcrystal/tensor.hpp"

namespace recip {

// Reverse-mode tape over real tensors. A graph is built per forward pass;
// backward(loss) accumulates d(loss)/d(node) for every node that depends on
// a gradient-tracked leaf. Complex tensors are real tensors with a trailing
// dimension of 2, so every gradient here is an ordinary real partial
// derivative and finite differences apply directly.
class Graph {
 public:
  using Id = int;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Id leaf(Tensor v, bool requires_grad = false);

  // elementwise (same shape)
  Id add(Id a, Id b);
  Id sub(Id a, Id b);
  Id mul(Id a, Id b);
  Id div(Id a, Id b);
  Id neg(Id a);
  Id scale(Id a, double c);
  Id add_const(Id a, double c);
  Id silu(Id a);
  Id exp_(Id a);
  Id sqrt_(Id a);
  Id rsqrt(Id a, double eps);  // 1/sqrt(x + eps)

  // broadcasting: b's shape equals the trailing shape of x
  Id badd(Id x, Id b);
  // s has shape {x.shape[0]}; scales each leading row
  Id scale_rows(Id x, Id s);
  // x has complex layout (...,2); s has shape x.shape minus the trailing 2
  Id scale_channels(Id x, Id s);

  // linear algebra
  Id matmul(Id a, Id b);   // (m,k) x (k,n) real
  Id cmatmul(Id a, Id b);  // (m,k,2) x (k,n,2) complex
  Id cmul(Id a, Id b);     // elementwise complex, same shape
  // x (S,D,2) times per-feature complex vector w (D,2), broadcast over rows
  Id cmul_rows(Id x, Id w);

  // shape / assembly
  Id reshape(Id a, std::vector<int> shape);
  Id slice_rows(Id a, int start, int len);
  Id concat_rows(const std::vector<Id>& parts);
  Id add_to_rows(Id x, Id y, int start);  // out = x; out[start..) += y

  // reductions
  Id sum_all(Id a);   // -> scalar, shape {}
  Id mean_all(Id a);  // -> scalar
  Id row_sums(Id a);  // (S, ...) -> (S)

  // attention pieces; q,k,v are (S,H,Dh,2)
  Id attn_scores(Id q, Id k, double scl);  // -> (H,S,S), Re(q k^*) per head
  Id softmax_lastdim(Id a);
  Id attn_mix(Id w, Id v);  // (H,S,S),(S,H,Dh,2) -> (S,H,Dh,2)
  // multiply complex entries by exp(i*theta); theta has x's shape minus the 2
  Id phase_rotate(Id x, Id theta);
  Id scale_heads(Id x, Id s);  // (S,H,Dh,2), s (H)

  // lookup / losses
  Id gather_rows(Id table, std::vector<int> idx);  // (N,d) -> (k,d)
  Id cross_entropy_mean(Id logits, std::vector<int> targets);  // (k,n) -> scalar
  Id cmodulus(Id x);  // (...,2) -> (...)

  void backward(Id loss);

  const Tensor& val(Id id) const { return nodes_[id].val; }
  // Zero-filled when the node was never reached during backward.
  const Tensor& grad(Id id);
  bool requires_grad(Id id) const { return nodes_[id].requires_grad; }
  int size() const { return static_cast<int>(nodes_.size()); }

 private:
  struct Node {
    Tensor val;
    Tensor grad;
    bool requires_grad = false;
    bool grad_alloc = false;
    std::function<void()> backprop;  // may be empty (leaves)
  };

  Id push(Tensor v, bool requires_grad, std::function<void()> fn);
  Tensor& grad_ref(Id id);
  void accumulate(Id id, const Tensor& g);

  std::vector<Node> nodes_;
};

}  // namespace recip
