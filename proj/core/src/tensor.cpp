#include "recipcrystal/tensor.hpp"

namespace recip {

std::string Tensor::shape_str() const {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

Tensor zeros_like(const Tensor& t) { return Tensor(t.shape); }

}  // namespace recip
