#pragma once

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

namespace recip {

// Dense row-major real tensor. Complex tensors use this type with a trailing
// dimension of 2 holding (re, im) pairs; all network math follows that
// convention so gradients are plain real partial derivatives.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(numel_of(shape), 0.0);
  }
  Tensor(std::vector<int> s, double fill) : shape(std::move(s)) {
    data.assign(numel_of(shape), fill);
  }

  static std::size_t numel_of(const std::vector<int>& s) {
    std::size_t n = 1;
    for (int d : s) n *= static_cast<std::size_t>(d);
    return n;
  }
  std::size_t numel() const { return data.size(); }
  int dim(int i) const { return shape[i]; }
  int ndim() const { return static_cast<int>(shape.size()); }
  bool is_complex_layout() const { return !shape.empty() && shape.back() == 2; }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  std::complex<double> cx(std::size_t channel) const {
    return {data[2 * channel], data[2 * channel + 1]};
  }
  void set_cx(std::size_t channel, std::complex<double> v) {
    data[2 * channel] = v.real();
    data[2 * channel + 1] = v.imag();
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  std::string shape_str() const;
};

Tensor zeros_like(const Tensor& t);

}  // namespace recip
