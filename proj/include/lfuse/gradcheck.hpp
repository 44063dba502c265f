#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "lfuse/error.hpp"
#include "lfuse/tensor.hpp"

namespace lfuse {

// Central-difference gradient of a scalar function, one coordinate at a
// time: (f(p + eps e_i) - f(p - eps e_i)) / (2 eps). Independent of the tape.
template <typename T>
Tensor<T> finite_diff_grad(const std::function<T(const Tensor<T>&)>& f,
                           const Tensor<T>& params, T eps) {
  if (!(eps > T(0))) throw ContractError("finite_diff_grad: eps must be positive");
  Tensor<T> grad(params.shape());
  Tensor<T> probe = params;
  for (std::size_t i = 0; i < params.numel(); ++i) {
    const T orig = probe[i];
    probe[i] = orig + eps;
    const T plus = f(probe);
    probe[i] = orig - eps;
    const T minus = f(probe);
    probe[i] = orig;
    grad[i] = (plus - minus) / (T(2) * eps);
  }
  return grad;
}

// ||a - b|| / max(||a||, ||b||); zero when both vanish.
template <typename T>
double relative_error(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("relative_error: " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
  double diff = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double x = a[i], y = b[i];
    diff += (x - y) * (x - y);
    na += x * x;
    nb += y * y;
  }
  const double denom = std::sqrt(std::max(na, nb));
  if (denom == 0.0) return 0.0;
  return std::sqrt(diff) / denom;
}

}  // namespace lfuse
