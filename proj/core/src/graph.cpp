#include "recipcrystal/graph.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "recipcrystal/errors.hpp"

namespace recip {

namespace {

using CMat = Eigen::Matrix<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const CMat> cmap(const Tensor& t, int rows, int cols) {
  return {reinterpret_cast<const std::complex<double>*>(t.data.data()), rows, cols};
}
Eigen::Map<CMat> cmap_mut(Tensor& t, int rows, int cols) {
  return {reinterpret_cast<std::complex<double>*>(t.data.data()), rows, cols};
}
Eigen::Map<const RMat> rmap(const Tensor& t, int rows, int cols) {
  return {t.data.data(), rows, cols};
}
Eigen::Map<RMat> rmap_mut(Tensor& t, int rows, int cols) {
  return {t.data.data(), rows, cols};
}

void need(bool cond, const char* msg) {
  if (!cond) throw Error(std::string("graph: ") + msg);
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Graph::Id Graph::push(Tensor v, bool requires_grad, std::function<void()> fn) {
  Node n;
  n.val = std::move(v);
  n.requires_grad = requires_grad;
  n.backprop = std::move(fn);
  nodes_.push_back(std::move(n));
  return static_cast<Id>(nodes_.size()) - 1;
}

Tensor& Graph::grad_ref(Id id) {
  Node& n = nodes_[id];
  if (!n.grad_alloc) {
    n.grad = Tensor(n.val.shape);
    n.grad_alloc = true;
  }
  return n.grad;
}

void Graph::accumulate(Id id, const Tensor& g) {
  if (!nodes_[id].requires_grad) return;
  Tensor& dst = grad_ref(id);
  for (std::size_t i = 0; i < g.data.size(); ++i) dst.data[i] += g.data[i];
}

const Tensor& Graph::grad(Id id) {
  return grad_ref(id);  // zero-filled if never touched
}

Graph::Id Graph::leaf(Tensor v, bool requires_grad) {
  return push(std::move(v), requires_grad, nullptr);
}

Graph::Id Graph::add(Id a, Id b) {
  need(nodes_[a].val.same_shape(nodes_[b].val), "add: shape mismatch");
  Tensor out = nodes_[a].val;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += nodes_[b].val.data[i];
  bool rg = nodes_[a].requires_grad || nodes_[b].requires_grad;
  Id id = push(std::move(out), rg, nullptr);
  nodes_[id].backprop = [this, a, b, id] {
    const Tensor& g = nodes_[id].grad;
    accumulate(a, g);
    accumulate(b, g);
  };
  return id;
}

Graph::Id Graph::sub(Id a, Id b) {
  need(nodes_[a].val.same_shape(nodes_[b].val), "sub: shape mismatch");
  Tensor out = nodes_[a].val;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= nodes_[b].val.data[i];
  bool rg = nodes_[a].requires_grad || nodes_[b].requires_grad;
  Id id = push(std::move(out), rg, nullptr);
  nodes_[id].backprop = [this, a, b, id] {
    const Tensor& g = nodes_[id].grad;
    accumulate(a, g);
    if (nodes_[b].requires_grad) {
      Tensor& db = grad_ref(b);
      for (std::size_t i = 0; i < g.data.size(); ++i) db.data[i] -= g.data[i];
    }
  };
  return id;
}

Graph::Id Graph::mul(Id a, Id b) {
  need(nodes_[a].val.same_shape(nodes_[b].val), "mul: shape mismatch");
  Tensor out = nodes_[a].val;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= nodes_[b].val.data[i];
  bool rg = nodes_[a].requires_grad || nodes_[b].requires_grad;
  Id id = push(std::move(out), rg, nullptr);
  nodes_[id].backprop = [this, a, b, id] {
    const Tensor& g = nodes_[id].grad;
    if (nodes_[a].requires_grad) {
      Tensor& da = grad_ref(a);
      const Tensor& bv = nodes_[b].val;
      for (std::size_t i = 0; i < g.data.size(); ++i) da.data[i] += g.data[i] * bv.data[i];
    }
    if (nodes_[b].requires_grad) {
      Tensor& db = grad_ref(b);
      const Tensor& av = nodes_[a].val;
      for (std::size_t i = 0; i < g.data.size(); ++i) db.data[i] += g.data[i] * av.data[i];
    }
  };
  return id;
}

Graph::Id Graph::div(Id a, Id b) {
  need(nodes_[a].val.same_shape(nodes_[b].val), "div: shape mismatch");
  Tensor out = nodes_[a].val;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] /= nodes_[b].val.data[i];
  bool rg = nodes_[a].requires_grad || nodes_[b].requires_grad;
  Id id = push(std::move(out), rg, nullptr);
  nodes_[id].backprop = [this, a, b, id] {
    const Tensor& g = nodes_[id].grad;
    const Tensor& av = nodes_[a].val;
    const Tensor& bv = nodes_[b].val;
    if (nodes_[a].requires_grad) {
      Tensor& da = grad_ref(a);
      for (std::size_t i = 0; i < g.data.size(); ++i) da.data[i] += g.data[i] / bv.data[i];
    }
    if (nodes_[b].requires_grad) {
      Tensor& db = grad_ref(b);
      for (std::size_t i = 0; i < g.data.size(); ++i) {
        db.data[i] -= g.data[i] * av.data[i] / (bv.data[i] * bv.data[i]);
      }
    }
  };
  return id;
}

Graph::Id Graph::neg(Id a) { return scale(a, -1.0); }

Graph::Id Graph::scale(Id a, double c) {
  Tensor out = nodes_[a].val;
  for (double& v : out.data) v *= c;
  Id id = push(std::move(out), nodes_[a].requires_grad, nullptr);
  nodes_[id].backprop = [this, a, c, id] {
    if (!nodes_[a].requires_grad) return;
    const Tensor& g = nodes_[id].grad;
    Tensor& da = grad_ref(a);
    for (std::size_t i = 0; i < g.data.size(); ++i) da.data[i] += c * g.data[i];
  };
  return id;
}

Graph::Id Graph::add_const(Id a, double c) {
  Tensor out = nodes_[a].val;
  for (double& v : out.data) v += c;
  Id id = push(std::move(out), nodes_[a].requires_grad, nullptr);
  nodes_[id].backprop = [this, a, id] { accumulate(a, nodes_[id].grad); };
  return id;
}

Graph::Id Graph::silu(Id a) {
  Tensor out = nodes_[a].val;
  for (double& v : out.data) v = v * sigmoid(v);
  Id id = push(std::move(out), nodes_[a].requires_grad, nullptr);
  nodes_[id].backprop = [this, a, id] {
    if (!nodes_[a].requires_grad) return;
    const Tensor& g = nodes_[id].grad;
    const Tensor& av = nodes_[a].val;
    Tensor& da = grad_ref(a);
    for (std::size_t i = 0; i < g.data.size(); ++i) {
      const double s = sigmoid(av.data[i]);
      da.data[i] += g.data[i] * s * (1.0 + av.data[i] * (1.0 - s));
    }
  };
  return id;
}

Graph::Id Graph::exp_(Id a) {
  Tensor out = nodes_[a].val;
  for (double& v : out.data) v = std::exp(v);
  Id id = push(std::move(out), nodes_[a].requires_grad, nullptr);
  nodes_[id].backprop = [this, a, id] {
    if (!nodes_[a].requires_grad) return;
    const Tensor& g = nodes_[id].grad;
    const Tensor& ov = nodes_[id].val;
    Tensor& da = grad_ref(a);
    for (std::size_t i = 0; i < g.data.size(); ++i) da.data[i] += g.data[i] * ov.data[i];
  };
  return id;
}

Graph::Id Graph::sqrt_(Id a) {
  Tensor out = nodes_[a].val;
  for (double& v : out.data) v = std::sqrt(v);
  Id id = push(std::move(out), nodes_[a].requires_grad, nullptr);
  nodes_[id].backprop = [this, a, id] {
    if (!nodes_[a].requires_grad) return;
    const Tensor& g = nodes_[id].grad;
    const Tensor& ov = nodes_[id].val;
    Tensor& da = grad_ref(a);
    for (std::size_t i = 0; i < g.data.size(); ++i) {
      if (ov.data[i] > 0.0) da.data[i] += g.data[i] / (2.0 * ov.data[i]);
    }
  };
  return id;
}

Graph::Id Graph::rsqrt(Id a, double eps) {
  Tensor out = nodes_[a].val;
  for (double& v : out.data) v = 1.0 / std::sqrt(v + eps);
  Id id = push(std::move(out), nodes_[a].requires_grad, nullptr);
  nodes_[id].backprop = [this, a, id] {
    if (!nodes_[a].requires_grad) return;
    const Tensor& g = nodes_[id].grad;
    const Tensor& ov = nodes_[id].val;
    Tensor& da = grad_ref(a);
    for (std::size_t i = 0; i < g.data.size(); ++i) {
      const double y = ov.data[i];
      da.data[i] += g.data[i] * (-0.5) * y * y * y;
    }
  };
  return id;
}

Graph::Id Graph::badd(Id x, Id b) {
  const Tensor& xv = nodes_[x].val;
  const Tensor& bv = nodes_[b].val;
  need(xv.numel() % bv.numel() == 0, "badd: trailing shape mismatch");
  const std::size_t bn = bv.numel();
  Tensor out = xv;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += bv.data[i % bn];
  bool rg = nodes_[x].requires_grad || nodes_[b].requires_grad;
  Id id = push(std::move(out), rg, nullptr);
  nodes_[id].backprop = [this, x, b, bn, id] {
    const Tensor& g = nodes_[id].grad;
    accumulate(x, g);
    if (nodes_[b].requires_grad) {
      Tensor& db = grad_ref(b);
      for (std::size_t i = 0; i < g.data.size(); ++i) db.data[i % bn] += g.data[i];
    }
  };
  return id;
}

Graph::Id Graph::scale_rows(Id x, Id s) {
  const Tensor& xv = nodes_[x].val;
  const Tensor& sv = nodes_[s].val;
  need(!xv.shape.empty() && sv.numel() == static_cast<std::size_t>(xv.shape[0]),
       "scale_rows: s must have one entry per leading row");
  const std::size_t stride = xv.numel() / sv.numel();
  Tensor out = xv;
  for (std::size_t r = 0; r < sv.numel(); ++r) {
    for (std::size_t i = 0; i < stride; ++i) out.data[r * stride + i] *= sv.data[r];
  }
  bool rg = nodes_[x].requires_grad || nodes_[s].requires_grad;
  Id id = push(std::move(out), rg, nullptr);
  nodes_[id].backprop = [this, x, s, stride, id] {
    const Tensor& g = nodes_[id].grad;
    const Tensor& xv2 = nodes_[x].val;
    const Tensor& sv2 = nodes_[s].val;
    if (nodes_[x].requires_grad) {
      Tensor& dx = grad_ref(x);
      for (std::size_t r = 0; r < sv2.numel(); ++r) {
        for (std::size_t i = 0; i < stride; ++i) {
          dx.data[r * stride + i] += g.data[r * stride + i] * sv2.data[r];
        }
      }
    }
    if (nodes_[s].requires_grad) {
      Tensor& ds = grad_ref(s);
      for (std::size_t r = 0; r < sv2.numel(); ++r) {
        double acc = 0.0;
        for (std::size_t i = 0; i < stride; ++i) {
          acc += g.data[r * stride + i] * xv2.data[r * stride + i];
        }
        ds.data[r] += acc;
      }
    }
  };
  return id;
}

Graph::Id Graph::scale_channels(Id x, Id s) {
  const Tensor& xv = nodes_[x].val;
  const Tensor& sv = nodes_[s].val;
  need(xv.is_complex_layout() && sv.numel() * 2 == xv.numel(),
       "scale_channels: s must have one entry per complex channel");
  Tensor out = xv;
  for (std::size_t c = 0; c < sv.numel(); ++c) {
    out.data[2 * c] *= sv.data[c];
    out.data[2 * c + 1] *= sv.data[c];
  }
  bool rg = nodes_[x].requires_grad || nodes_[s].requires_grad;
  Id id = push(std::move(out), rg, nullptr);
  nodes_[id].backprop = [this, x, s, id] {
    const Tensor& g = nodes_[id].grad;
    const Tensor& xv2 = nodes_[x].val;
    const Tensor& sv2 = nodes_[s].val;
    if (nodes_[x].requires_grad) {
      Tensor& dx = grad_ref(x);
      for (std::size_t c = 0; c < sv2.numel(); ++c) {
        dx.data[2 * c] += g.data[2 * c] * sv2.data[c];
        dx.data[2 * c + 1] += g.data[2 * c + 1] * sv2.data[c];
      }
    }
    if (nodes_[s].requires_grad) {
      Tensor& ds = grad_ref(s);
      for (std::size_t c = 0; c < sv2.numel(); ++c) {
        ds.data[c] += g.data[2 * c] * xv2.data[2 * c] + g.data[2 * c + 1] * xv2.data[2 * c + 1];
      }
    }
  };
  return id;
}

Graph::Id Graph::matmul(Id a, Id b) {
  const Tensor& av = nodes_[a].val;
  const Tensor& bv = nodes_[b].val;
  need(av.ndim() == 2 && bv.ndim() == 2 && av.shape[1] == bv.shape[0], "matmul: bad shapes");
  const int m = av.shape[0], k = av.shape[1], n = bv.shape[1];
  Tensor out({m, n});
  rmap_mut(out, m, n).noalias() = rmap(av, m, k) * rmap(bv, k, n);
  bool rg = nodes_[a].requires_grad || nodes_[b].requires_grad;
  Id id = push(std::move(out), rg, nullptr);
  nodes_[id].backprop = [this, a, b, m, k, n, id] {
    const Tensor& g = nodes_[id].grad;
    if (nodes_[a].requires_grad) {
      rmap_mut(grad_ref(a), m, k).noalias() +=
          rmap(g, m, n) * rmap(nodes_[b].val, k, n).transpose();
    }
    if (nodes_[b].requires_grad) {
      rmap_mut(grad_ref(b), k, n).noalias() +=
          rmap(nodes_[a].val, m, k).transpose() * rmap(g, m, n);
    }
  };
  return id;
}

Graph::Id Graph::cmatmul(Id a, Id b) {
  const Tensor& av = nodes_[a].val;
  const Tensor& bv = nodes_[b].val;
  need(av.ndim() == 3 && bv.ndim() == 3 && av.shape[2] == 2 && bv.shape[2] == 2 &&
           av.shape[1] == bv.shape[0],
       "cmatmul: bad shapes");
  const int m = av.shape[0], k = av.shape[1], n = bv.shape[1];
  Tensor out({m, n, 2});
  cmap_mut(out, m, n).noalias() = cmap(av, m, k) * cmap(bv, k, n);
  bool rg = nodes_[a].requires_grad || nodes_[b].requires_grad;
  Id id = push(std::move(out), rg, nullptr);
  // With gradients stored as (dL/dRe + i dL/dIm), the chain rule reads
  // dA = G B^H and dB = A^H G.
  nodes_[id].backprop = [this, a, b, m, k, n, id] {
    const Tensor& g = nodes_[id].grad;
    if (nodes_[a].requires_grad) {
      cmap_mut(grad_ref(a), m, k).noalias() +=
          cmap(g, m, n) * cmap(nodes_[b].val, k, n).adjoint();
    }
    if (nodes_[b].requires_grad) {
      cmap_mut(grad_ref(b), k, n).noalias() +=
          cmap(nodes_[a].val, m, k).adjoint() * cmap(g, m, n);
    }
  };
  return id;
}

Graph::Id Graph::cmul(Id a, Id b) {
  const Tensor& av = nodes_[a].val;
  need(av.same_shape(nodes_[b].val) && av.is_complex_layout(), "cmul: bad shapes");
  const std::size_t nc = av.numel() / 2;
  Tensor out(av.shape);
  const Tensor& bv = nodes_[b].val;
  for (std::size_t c = 0; c < nc; ++c) out.set_cx(c, av.cx(c) * bv.cx(c));
  bool rg = nodes_[a].requires_grad || nodes_[b].requires_grad;
  Id id = push(std::move(out), rg, nullptr);
  nodes_[id].backprop = [this, a, b, nc, id] {
    const Tensor& g = nodes_[id].grad;
    const Tensor& av2 = nodes_[a].val;
    const Tensor& bv2 = nodes_[b].val;
    if (nodes_[a].requires_grad) {
      Tensor& da = grad_ref(a);
      for (std::size_t c = 0; c < nc; ++c) {
        da.set_cx(c, da.cx(c) + g.cx(c) * std::conj(bv2.cx(c)));
      }
    }
    if (nodes_[b].requires_grad) {
      Tensor& db = grad_ref(b);
      for (std::size_t c = 0; c < nc; ++c) {
        db.set_cx(c, db.cx(c) + g.cx(c) * std::conj(av2.cx(c)));
      }
    }
  };
  return id;
}

Graph::Id Graph::cmul_rows(Id x, Id w) {
  const Tensor& xv = nodes_[x].val;
  const Tensor& wv = nodes_[w].val;
  need(xv.is_complex_layout() && wv.is_complex_layout() &&
           xv.numel() % wv.numel() == 0,
       "cmul_rows: bad shapes");
  const std::size_t d = wv.numel() / 2;
  const std::size_t nc = xv.numel() / 2;
  Tensor out(xv.shape);
  for (std::size_t c = 0; c < nc; ++c) out.set_cx(c, xv.cx(c) * wv.cx(c % d));
  bool rg = nodes_[x].requires_grad || nodes_[w].requires_grad;
  Id id = push(std::move(out), rg, nullptr);
  nodes_[id].backprop = [this, x, w, d, nc, id] {
    const Tensor& g = nodes_[id].grad;
    const Tensor& xv2 = nodes_[x].val;
    const Tensor& wv2 = nodes_[w].val;
    if (nodes_[x].requires_grad) {
      Tensor& dx = grad_ref(x);
      for (std::size_t c = 0; c < nc; ++c) {
        dx.set_cx(c, dx.cx(c) + g.cx(c) * std::conj(wv2.cx(c % d)));
      }
    }
    if (nodes_[w].requires_grad) {
      Tensor& dw = grad_ref(w);
      for (std::size_t c = 0; c < nc; ++c) {
        dw.set_cx(c % d, dw.cx(c % d) + g.cx(c) * std::conj(xv2.cx(c)));
      }
    }
  };
  return id;
}

Graph::Id Graph::reshape(Id a, std::vector<int> shape) {
  need(Tensor::numel_of(shape) == nodes_[a].val.numel(), "reshape: numel mismatch");
  Tensor out = nodes_[a].val;
  out.shape = std::move(shape);
  Id id = push(std::move(out), nodes_[a].requires_grad, nullptr);
  nodes_[id].backprop = [this, a, id] {
    if (!nodes_[a].requires_grad) return;
    Tensor& da = grad_ref(a);
    const Tensor& g = nodes_[id].grad;
    for (std::size_t i = 0; i < g.data.size(); ++i) da.data[i] += g.data[i];
  };
  return id;
}

Graph::Id Graph::slice_rows(Id a, int start, int len) {
  const Tensor& av = nodes_[a].val;
  need(av.ndim() >= 1 && start >= 0 && start + len <= av.shape[0], "slice_rows: out of range");
  const std::size_t stride = av.numel() / av.shape[0];
  std::vector<int> shape = av.shape;
  shape[0] = len;
  Tensor out(shape);
  std::copy_n(av.data.begin() + start * stride, len * stride, out.data.begin());
  Id id = push(std::move(out), nodes_[a].requires_grad, nullptr);
  nodes_[id].backprop = [this, a, start, stride, id] {
    if (!nodes_[a].requires_grad) return;
    const Tensor& g = nodes_[id].grad;
    Tensor& da = grad_ref(a);
    for (std::size_t i = 0; i < g.data.size(); ++i) da.data[start * stride + i] += g.data[i];
  };
  return id;
}

Graph::Id Graph::concat_rows(const std::vector<Id>& parts) {
  need(!parts.empty(), "concat_rows: empty");
  const Tensor& first = nodes_[parts[0]].val;
  const std::size_t stride = first.numel() / first.shape[0];
  int rows = 0;
  bool rg = false;
  for (Id p : parts) {
    const Tensor& v = nodes_[p].val;
    need(v.numel() / v.shape[0] == stride, "concat_rows: trailing shape mismatch");
    rows += v.shape[0];
    rg = rg || nodes_[p].requires_grad;
  }
  std::vector<int> shape = first.shape;
  shape[0] = rows;
  Tensor out(shape);
  std::size_t off = 0;
  for (Id p : parts) {
    const Tensor& v = nodes_[p].val;
    std::copy(v.data.begin(), v.data.end(), out.data.begin() + off);
    off += v.numel();
  }
  Id id = push(std::move(out), rg, nullptr);
  std::vector<Id> parts_copy = parts;
  nodes_[id].backprop = [this, parts_copy, id] {
    const Tensor& g = nodes_[id].grad;
    std::size_t off2 = 0;
    for (Id p : parts_copy) {
      const std::size_t n = nodes_[p].val.numel();
      if (nodes_[p].requires_grad) {
        Tensor& dp = grad_ref(p);
        for (std::size_t i = 0; i < n; ++i) dp.data[i] += g.data[off2 + i];
      }
      off2 += n;
    }
  };
  return id;
}

Graph::Id Graph::add_to_rows(Id x, Id y, int start) {
  const Tensor& xv = nodes_[x].val;
  const Tensor& yv = nodes_[y].val;
  const std::size_t stride = xv.numel() / xv.shape[0];
  need(yv.numel() / yv.shape[0] == stride && start >= 0 && start + yv.shape[0] <= xv.shape[0],
       "add_to_rows: bad shapes");
  Tensor out = xv;
  for (std::size_t i = 0; i < yv.numel(); ++i) out.data[start * stride + i] += yv.data[i];
  bool rg = nodes_[x].requires_grad || nodes_[y].requires_grad;
  Id id = push(std::move(out), rg, nullptr);
  nodes_[id].backprop = [this, x, y, start, stride, id] {
    const Tensor& g = nodes_[id].grad;
    accumulate(x, g);
    if (nodes_[y].requires_grad) {
      Tensor& dy = grad_ref(y);
      for (std::size_t i = 0; i < dy.data.size(); ++i) dy.data[i] += g.data[start * stride + i];
    }
  };
  return id;
}

Graph::Id Graph::sum_all(Id a) {
  double acc = 0.0;
  for (double v : nodes_[a].val.data) acc += v;
  Tensor out(std::vector<int>{});
  out.data[0] = acc;
  Id id = push(std::move(out), nodes_[a].requires_grad, nullptr);
  nodes_[id].backprop = [this, a, id] {
    if (!nodes_[a].requires_grad) return;
    const double g = nodes_[id].grad.data[0];
    Tensor& da = grad_ref(a);
    for (double& v : da.data) v += g;
  };
  return id;
}

Graph::Id Graph::mean_all(Id a) {
  return scale(sum_all(a), 1.0 / static_cast<double>(nodes_[a].val.numel()));
}

Graph::Id Graph::row_sums(Id a) {
  const Tensor& av = nodes_[a].val;
  need(av.ndim() >= 1, "row_sums: needs at least 1 dim");
  const int rows = av.shape[0];
  const std::size_t stride = av.numel() / rows;
  Tensor out({rows});
  for (int r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t i = 0; i < stride; ++i) acc += av.data[r * stride + i];
    out.data[r] = acc;
  }
  Id id = push(std::move(out), nodes_[a].requires_grad, nullptr);
  nodes_[id].backprop = [this, a, rows, stride, id] {
    if (!nodes_[a].requires_grad) return;
    const Tensor& g = nodes_[id].grad;
    Tensor& da = grad_ref(a);
    for (int r = 0; r < rows; ++r) {
      for (std::size_t i = 0; i < stride; ++i) da.data[r * stride + i] += g.data[r];
    }
  };
  return id;
}

Graph::Id Graph::attn_scores(Id q, Id k, double scl) {
  const Tensor& qv = nodes_[q].val;
  const Tensor& kv = nodes_[k].val;
  need(qv.ndim() == 4 && qv.shape[3] == 2 && qv.same_shape(kv), "attn_scores: bad shapes");
  const int S = qv.shape[0], H = qv.shape[1], Dh = qv.shape[2];
  auto off = [H, Dh](int s, int h) { return (static_cast<std::size_t>(s) * H + h) * Dh * 2; };
  Tensor out({H, S, S});
  for (int h = 0; h < H; ++h) {
    for (int i = 0; i < S; ++i) {
      for (int j = 0; j < S; ++j) {
        const double* qp = qv.data.data() + off(i, h);
        const double* kp = kv.data.data() + off(j, h);
        double acc = 0.0;
        for (int d = 0; d < 2 * Dh; ++d) acc += qp[d] * kp[d];  // Re(q k^*)
        out.data[(static_cast<std::size_t>(h) * S + i) * S + j] = scl * acc;
      }
    }
  }
  bool rg = nodes_[q].requires_grad || nodes_[k].requires_grad;
  Id id = push(std::move(out), rg, nullptr);
  nodes_[id].backprop = [this, q, k, scl, S, H, Dh, off, id] {
    const Tensor& g = nodes_[id].grad;
    const Tensor& qv2 = nodes_[q].val;
    const Tensor& kv2 = nodes_[k].val;
    for (int h = 0; h < H; ++h) {
      for (int i = 0; i < S; ++i) {
        for (int j = 0; j < S; ++j) {
          const double gij = scl * g.data[(static_cast<std::size_t>(h) * S + i) * S + j];
          if (gij == 0.0) continue;
          if (nodes_[q].requires_grad) {
            Tensor& dq = grad_ref(q);
            double* dqp = dq.data.data() + off(i, h);
            const double* kp = kv2.data.data() + off(j, h);
            for (int d = 0; d < 2 * Dh; ++d) dqp[d] += gij * kp[d];
          }
          if (nodes_[k].requires_grad) {
            Tensor& dk = grad_ref(k);
            double* dkp = dk.data.data() + off(j, h);
            const double* qp = qv2.data.data() + off(i, h);
            for (int d = 0; d < 2 * Dh; ++d) dkp[d] += gij * qp[d];
          }
        }
      }
    }
  };
  return id;
}

Graph::Id Graph::softmax_lastdim(Id a) {
  const Tensor& av = nodes_[a].val;
  need(av.ndim() >= 1, "softmax: needs at least 1 dim");
  const int n = av.shape.back();
  const std::size_t rows = av.numel() / n;
  Tensor out(av.shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = av.data.data() + r * n;
    double* dst = out.data.data() + r * n;
    double mx = src[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, src[i]);
    double z = 0.0;
    for (int i = 0; i < n; ++i) {
      dst[i] = std::exp(src[i] - mx);
      z += dst[i];
    }
    for (int i = 0; i < n; ++i) dst[i] /= z;
  }
  Id id = push(std::move(out), nodes_[a].requires_grad, nullptr);
  nodes_[id].backprop = [this, a, n, rows, id] {
    if (!nodes_[a].requires_grad) return;
    const Tensor& g = nodes_[id].grad;
    const Tensor& y = nodes_[id].val;
    Tensor& da = grad_ref(a);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* gp = g.data.data() + r * n;
      const double* yp = y.data.data() + r * n;
      double dot = 0.0;
      for (int i = 0; i < n; ++i) dot += gp[i] * yp[i];
      double* dp = da.data.data() + r * n;
      for (int i = 0; i < n; ++i) dp[i] += yp[i] * (gp[i] - dot);
    }
  };
  return id;
}

Graph::Id Graph::attn_mix(Id w, Id v) {
  const Tensor& wv = nodes_[w].val;
  const Tensor& vv = nodes_[v].val;
  need(wv.ndim() == 3 && vv.ndim() == 4 && vv.shape[3] == 2 && wv.shape[0] == vv.shape[1] &&
           wv.shape[1] == vv.shape[0] && wv.shape[2] == vv.shape[0],
       "attn_mix: bad shapes");
  const int H = wv.shape[0], S = wv.shape[1], Dh = vv.shape[2];
  auto off = [H, Dh](int s, int h) { return (static_cast<std::size_t>(s) * H + h) * Dh * 2; };
  Tensor out({S, H, Dh, 2});
  for (int h = 0; h < H; ++h) {
    for (int i = 0; i < S; ++i) {
      double* op = out.data.data() + off(i, h);
      for (int j = 0; j < S; ++j) {
        const double wij = wv.data[(static_cast<std::size_t>(h) * S + i) * S + j];
        if (wij == 0.0) continue;
        const double* vp = vv.data.data() + off(j, h);
        for (int d = 0; d < 2 * Dh; ++d) op[d] += wij * vp[d];
      }
    }
  }
  bool rg = nodes_[w].requires_grad || nodes_[v].requires_grad;
  Id id = push(std::move(out), rg, nullptr);
  nodes_[id].backprop = [this, w, v, S, H, Dh, off, id] {
    const Tensor& g = nodes_[id].grad;
    const Tensor& wv2 = nodes_[w].val;
    const Tensor& vv2 = nodes_[v].val;
    for (int h = 0; h < H; ++h) {
      for (int i = 0; i < S; ++i) {
        const double* gp = g.data.data() + off(i, h);
        for (int j = 0; j < S; ++j) {
          const std::size_t widx = (static_cast<std::size_t>(h) * S + i) * S + j;
          if (nodes_[w].requires_grad) {
            const double* vp = vv2.data.data() + off(j, h);
            double acc = 0.0;
            for (int d = 0; d < 2 * Dh; ++d) acc += gp[d] * vp[d];
            grad_ref(w).data[widx] += acc;
          }
          if (nodes_[v].requires_grad) {
            const double wij = wv2.data[widx];
            if (wij != 0.0) {
              double* dvp = grad_ref(v).data.data() + off(j, h);
              for (int d = 0; d < 2 * Dh; ++d) dvp[d] += wij * gp[d];
            }
          }
        }
      }
    }
  };
  return id;
}

Graph::Id Graph::phase_rotate(Id x, Id theta) {
  const Tensor& xv = nodes_[x].val;
  const Tensor& tv = nodes_[theta].val;
  need(xv.is_complex_layout() && tv.numel() * 2 == xv.numel(), "phase_rotate: bad shapes");
  const std::size_t nc = tv.numel();
  Tensor out(xv.shape);
  for (std::size_t c = 0; c < nc; ++c) {
    const double ct = std::cos(tv.data[c]);
    const double st = std::sin(tv.data[c]);
    const double re = xv.data[2 * c], im = xv.data[2 * c + 1];
    out.data[2 * c] = re * ct - im * st;
    out.data[2 * c + 1] = re * st + im * ct;
  }
  bool rg = nodes_[x].requires_grad || nodes_[theta].requires_grad;
  Id id = push(std::move(out), rg, nullptr);
  nodes_[id].backprop = [this, x, theta, nc, id] {
    const Tensor& g = nodes_[id].grad;
    const Tensor& ov = nodes_[id].val;
    const Tensor& tv2 = nodes_[theta].val;
    if (nodes_[x].requires_grad) {
      Tensor& dx = grad_ref(x);
      for (std::size_t c = 0; c < nc; ++c) {
        const double ct = std::cos(tv2.data[c]);
        const double st = std::sin(tv2.data[c]);
        const double gre = g.data[2 * c], gim = g.data[2 * c + 1];
        dx.data[2 * c] += gre * ct + gim * st;  // rotate gradient by -theta
        dx.data[2 * c + 1] += -gre * st + gim * ct;
      }
    }
    if (nodes_[theta].requires_grad) {
      Tensor& dt = grad_ref(theta);
      for (std::size_t c = 0; c < nc; ++c) {
        // d out/d theta = i * out
        dt.data[c] += -g.data[2 * c] * ov.data[2 * c + 1] + g.data[2 * c + 1] * ov.data[2 * c];
      }
    }
  };
  return id;
}

Graph::Id Graph::scale_heads(Id x, Id s) {
  const Tensor& xv = nodes_[x].val;
  const Tensor& sv = nodes_[s].val;
  need(xv.ndim() == 4 && xv.shape[3] == 2 && sv.numel() == static_cast<std::size_t>(xv.shape[1]),
       "scale_heads: bad shapes");
  const int S = xv.shape[0], H = xv.shape[1], Dh = xv.shape[2];
  Tensor out = xv;
  for (int i = 0; i < S; ++i) {
    for (int h = 0; h < H; ++h) {
      double* p = out.data.data() + (static_cast<std::size_t>(i) * H + h) * Dh * 2;
      for (int d = 0; d < 2 * Dh; ++d) p[d] *= sv.data[h];
    }
  }
  bool rg = nodes_[x].requires_grad || nodes_[s].requires_grad;
  Id id = push(std::move(out), rg, nullptr);
  nodes_[id].backprop = [this, x, s, S, H, Dh, id] {
    const Tensor& g = nodes_[id].grad;
    const Tensor& xv2 = nodes_[x].val;
    const Tensor& sv2 = nodes_[s].val;
    for (int i = 0; i < S; ++i) {
      for (int h = 0; h < H; ++h) {
        const std::size_t base = (static_cast<std::size_t>(i) * H + h) * Dh * 2;
        if (nodes_[x].requires_grad) {
          Tensor& dx = grad_ref(x);
          for (int d = 0; d < 2 * Dh; ++d) dx.data[base + d] += g.data[base + d] * sv2.data[h];
        }
        if (nodes_[s].requires_grad) {
          double acc = 0.0;
          for (int d = 0; d < 2 * Dh; ++d) acc += g.data[base + d] * xv2.data[base + d];
          grad_ref(s).data[h] += acc;
        }
      }
    }
  };
  return id;
}

Graph::Id Graph::gather_rows(Id table, std::vector<int> idx) {
  const Tensor& tv = nodes_[table].val;
  need(tv.ndim() == 2, "gather_rows: table must be 2D");
  const int d = tv.shape[1];
  Tensor out({static_cast<int>(idx.size()), d});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    need(idx[r] >= 0 && idx[r] < tv.shape[0], "gather_rows: index out of range");
    std::copy_n(tv.data.begin() + static_cast<std::size_t>(idx[r]) * d, d,
                out.data.begin() + r * d);
  }
  Id id = push(std::move(out), nodes_[table].requires_grad, nullptr);
  nodes_[id].backprop = [this, table, idx = std::move(idx), d, id] {
    if (!nodes_[table].requires_grad) return;
    const Tensor& g = nodes_[id].grad;
    Tensor& dt = grad_ref(table);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      for (int i = 0; i < d; ++i) {
        dt.data[static_cast<std::size_t>(idx[r]) * d + i] += g.data[r * d + i];
      }
    }
  };
  return id;
}

Graph::Id Graph::cross_entropy_mean(Id logits, std::vector<int> targets) {
  const Tensor& lv = nodes_[logits].val;
  need(lv.ndim() == 2 && static_cast<std::size_t>(lv.shape[0]) == targets.size(),
       "cross_entropy: bad shapes");
  const int k = lv.shape[0], n = lv.shape[1];
  // log-softmax with max subtraction for stability
  Tensor probs({k, n});
  double loss = 0.0;
  for (int r = 0; r < k; ++r) {
    const double* src = lv.data.data() + static_cast<std::size_t>(r) * n;
    double mx = src[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, src[i]);
    double z = 0.0;
    for (int i = 0; i < n; ++i) z += std::exp(src[i] - mx);
    const double logz = std::log(z) + mx;
    for (int i = 0; i < n; ++i) {
      probs.data[static_cast<std::size_t>(r) * n + i] = std::exp(src[i] - logz);
    }
    loss -= src[targets[r]] - logz;
  }
  Tensor out(std::vector<int>{});
  out.data[0] = loss / k;
  Id id = push(std::move(out), nodes_[logits].requires_grad, nullptr);
  nodes_[id].backprop = [this, logits, targets = std::move(targets), probs = std::move(probs),
                         k, n, id] {
    if (!nodes_[logits].requires_grad) return;
    const double g = nodes_[id].grad.data[0] / k;
    Tensor& dl = grad_ref(logits);
    for (int r = 0; r < k; ++r) {
      for (int i = 0; i < n; ++i) {
        const double onehot = (i == targets[r]) ? 1.0 : 0.0;
        dl.data[static_cast<std::size_t>(r) * n + i] +=
            g * (probs.data[static_cast<std::size_t>(r) * n + i] - onehot);
      }
    }
  };
  return id;
}

Graph::Id Graph::cmodulus(Id x) {
  const Tensor& xv = nodes_[x].val;
  need(xv.is_complex_layout(), "cmodulus: needs complex layout");
  const std::size_t nc = xv.numel() / 2;
  std::vector<int> shape(xv.shape.begin(), xv.shape.end() - 1);
  Tensor out(shape);
  for (std::size_t c = 0; c < nc; ++c) {
    out.data[c] = std::hypot(xv.data[2 * c], xv.data[2 * c + 1]);
  }
  Id id = push(std::move(out), nodes_[x].requires_grad, nullptr);
  nodes_[id].backprop = [this, x, nc, id] {
    if (!nodes_[x].requires_grad) return;
    const Tensor& g = nodes_[id].grad;
    const Tensor& ov = nodes_[id].val;
    const Tensor& xv2 = nodes_[x].val;
    Tensor& dx = grad_ref(x);
    for (std::size_t c = 0; c < nc; ++c) {
      if (ov.data[c] == 0.0) continue;  // subgradient 0 at the origin
      const double s = g.data[c] / ov.data[c];
      dx.data[2 * c] += s * xv2.data[2 * c];
      dx.data[2 * c + 1] += s * xv2.data[2 * c + 1];
    }
  };
  return id;
}

void Graph::backward(Id loss) {
  need(nodes_[loss].val.numel() == 1, "backward: loss must be scalar");
  need(nodes_[loss].requires_grad, "backward: loss does not depend on any parameter");
  grad_ref(loss).data[0] = 1.0;
  for (Id i = loss; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.grad_alloc && n.backprop) n.backprop();
  }
}

}  // namespace recip
