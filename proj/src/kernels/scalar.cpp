#include "gemm_impl.hpp"
#include "lfuse/kernels.hpp"

namespace lfuse::kernels {
namespace {

struct ScalarOps {
  template <typename T>
  static T dot(const T* a, const T* b, std::size_t n) {
    T acc = 0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
  }

  template <typename T>
  static void axpy(T alpha, const T* x, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
  }
};

template <typename T>
KernelTable<T> make_table() {
  return {
      &ScalarOps::dot<T>,
      &ScalarOps::axpy<T>,
      &detail::gemm_nn<ScalarOps, T>,
      &detail::gemm_nt<ScalarOps, T>,
      &detail::gemm_tn<ScalarOps, T>,
  };
}

}  // namespace

const KernelTable<float>& scalar_table_f32() {
  static const KernelTable<float> table = make_table<float>();
  return table;
}

const KernelTable<double>& scalar_table_f64() {
  static const KernelTable<double> table = make_table<double>();
  return table;
}

}  // namespace lfuse::kernels
