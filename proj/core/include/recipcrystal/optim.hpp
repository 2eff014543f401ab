#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "recipcrystal/graph.hpp"
#include "recipcrystal/rng.hpp"
#include "recipcrystal/tensor.hpp"

namespace recip {

// Named parameter tensors in stable insertion order (ordering matters for
// deterministic optimizer sweeps and checkpoint layout).
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor init);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool has(const std::string& name) const { return index_.count(name) != 0; }
  int index_of(const std::string& name) const;

  int count() const { return static_cast<int>(values_.size()); }
  const std::string& name(int i) const { return names_[i]; }
  Tensor& value(int i) { return values_[i]; }
  const Tensor& value(int i) const { return values_[i]; }
  std::size_t total_elements() const;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::unordered_map<std::string, int> index_;
};

// One forward pass's leaf bindings of a ParamStore into a Graph.
struct BoundParams {
  Graph* g = nullptr;
  const ParamStore* store = nullptr;
  std::vector<Graph::Id> ids;

  Graph::Id operator()(const std::string& name) const;
};

BoundParams bind_params(Graph& g, const ParamStore& store);

// Gradients per parameter (same order as the store) after backward().
std::vector<Tensor> collect_grads(Graph& g, const BoundParams& bp);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam() = default;
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  // Coupled L2: weight_decay * p is added to the gradient when nonzero.
  void step(ParamStore& params, const std::vector<Tensor>& grads, double lr,
            double weight_decay = 0.0);

  int steps_taken() const { return t_; }
  AdamConfig config() const { return cfg_; }

  // Checkpoint access to the raw moment buffers.
  std::vector<Tensor>& moment1() { return m_; }
  std::vector<Tensor>& moment2() { return v_; }
  void set_steps(int t) { t_ = t; }

 private:
  AdamConfig cfg_;
  std::vector<Tensor> m_, v_;
  int t_ = 0;
};

// Linear warmup from warmup_start to base_lr over warmup_steps, then cosine
// decay to min_lr at total_steps.
struct LrSchedule {
  double base_lr = 2e-4;
  double min_lr = 2e-5;
  double warmup_start = 1e-7;
  int warmup_steps = 1000;
  int total_steps = 1;

  double at(int step) const;
};

using LossBuilder = std::function<Graph::Id(Graph&, const BoundParams&)>;

struct GradCheckOptions {
  double step = 1e-6;
  int max_samples = 200;  // parameter entries sampled for finite differences
  std::uint64_t seed = 12345;
};

// Central-difference comparison of tape gradients on a random subsample of
// parameter entries. Returns max |analytic - numeric| / max(1e-8, |a|+|n|).
double grad_check(ParamStore& params, const LossBuilder& loss_builder,
                  const GradCheckOptions& opts = {});

// Initialization helpers.
Tensor randn_tensor(std::vector<int> shape, double stddev, Rng& rng);
Tensor full_tensor(std::vector<int> shape, double value);
// Complex tensor (shape + trailing 2) with every entry = value + 0i.
Tensor complex_const(std::vector<int> shape_no2, double value);

}  // namespace recip
