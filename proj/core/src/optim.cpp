#include "recipcrystal/optim.hpp"

#include <cmath>
#include <numbers>

#include "recipcrystal/errors.hpp"

namespace recip {

Tensor& ParamStore::add(const std::string& name, Tensor init) {
  if (index_.count(name)) throw Error("duplicate parameter: " + name);
  index_.emplace(name, static_cast<int>(values_.size()));
  names_.push_back(name);
  values_.push_back(std::move(init));
  return values_.back();
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("unknown parameter: " + name);
  return values_[it->second];
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("unknown parameter: " + name);
  return values_[it->second];
}

std::size_t ParamStore::total_elements() const {
  std::size_t n = 0;
  for (const Tensor& t : values_) n += t.numel();
  return n;
}

int ParamStore::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("unknown parameter: " + name);
  return it->second;
}

Graph::Id BoundParams::operator()(const std::string& name) const {
  return ids[store->index_of(name)];
}

BoundParams bind_params(Graph& g, const ParamStore& store) {
  BoundParams bp;
  bp.g = &g;
  bp.store = &store;
  bp.ids.reserve(store.count());
  for (int i = 0; i < store.count(); ++i) {
    bp.ids.push_back(g.leaf(store.value(i), /*requires_grad=*/true));
  }
  return bp;
}

std::vector<Tensor> collect_grads(Graph& g, const BoundParams& bp) {
  std::vector<Tensor> grads;
  grads.reserve(bp.ids.size());
  for (Graph::Id id : bp.ids) grads.push_back(g.grad(id));
  return grads;
}

void Adam::step(ParamStore& params, const std::vector<Tensor>& grads, double lr,
                double weight_decay) {
  if (m_.empty()) {
    for (int i = 0; i < params.count(); ++i) {
      m_.emplace_back(params.value(i).shape);
      v_.emplace_back(params.value(i).shape);
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
  for (int i = 0; i < params.count(); ++i) {
    Tensor& p = params.value(i);
    const Tensor& g = grads[i];
    for (std::size_t j = 0; j < p.numel(); ++j) {
      double gj = g.data[j];
      if (weight_decay != 0.0) gj += weight_decay * p.data[j];
      m_[i].data[j] = cfg_.beta1 * m_[i].data[j] + (1.0 - cfg_.beta1) * gj;
      v_[i].data[j] = cfg_.beta2 * v_[i].data[j] + (1.0 - cfg_.beta2) * gj * gj;
      const double mhat = m_[i].data[j] / bc1;
      const double vhat = v_[i].data[j] / bc2;
      p.data[j] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

double LrSchedule::at(int step) const {
  if (step < warmup_steps) {
    const double t = static_cast<double>(step) / warmup_steps;
    return warmup_start + t * (base_lr - warmup_start);
  }
  const int span = std::max(1, total_steps - warmup_steps);
  const double t = std::min(1.0, static_cast<double>(step - warmup_steps) / span);
  return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + std::cos(std::numbers::pi * t));
}

double grad_check(ParamStore& params, const LossBuilder& loss_builder,
                  const GradCheckOptions& opts) {
  // Analytic pass.
  std::vector<Tensor> analytic;
  {
    Graph g;
    BoundParams bp = bind_params(g, params);
    Graph::Id loss = loss_builder(g, bp);
    g.backward(loss);
    analytic = collect_grads(g, bp);
  }
  auto eval = [&]() {
    Graph g;
    BoundParams bp = bind_params(g, params);
    return g.val(loss_builder(g, bp)).data[0];
  };

  // Sample parameter entries without replacement (or take all when few).
  std::vector<std::pair<int, std::size_t>> entries;
  for (int i = 0; i < params.count(); ++i) {
    for (std::size_t j = 0; j < params.value(i).numel(); ++j) entries.emplace_back(i, j);
  }
  Rng rng(opts.seed);
  const int n_samples = std::min<std::size_t>(opts.max_samples, entries.size());
  for (int s = 0; s < n_samples; ++s) {
    const std::size_t pick = s + rng.uniform_int(0, static_cast<std::int64_t>(entries.size() - 1 - s));
    std::swap(entries[s], entries[pick]);
  }

  double worst = 0.0;
  for (int s = 0; s < n_samples; ++s) {
    auto [i, j] = entries[s];
    double& slot = params.value(i).data[j];
    const double saved = slot;
    slot = saved + opts.step;
    const double up = eval();
    slot = saved - opts.step;
    const double dn = eval();
    slot = saved;
    const double numeric = (up - dn) / (2.0 * opts.step);
    const double a = analytic[i].data[j];
    const double err = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
    worst = std::max(worst, err);
  }
  return worst;
}

Tensor randn_tensor(std::vector<int> shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = stddev * rng.normal();
  return t;
}

Tensor full_tensor(std::vector<int> shape, double value) {
  return Tensor(std::move(shape), value);
}

Tensor complex_const(std::vector<int> shape_no2, double value) {
  shape_no2.push_back(2);
  Tensor t(std::move(shape_no2));
  for (std::size_t c = 0; c < t.numel() / 2; ++c) t.data[2 * c] = value;
  return t;
}

}  // namespace recip
