// AArch64 only; NEON is part of the base ISA there.
#include <arm_neon.h>

#include "gemm_impl.hpp"
#include "lfuse/kernels.hpp"

namespace lfuse::kernels {
namespace {

struct NeonOps {
  static float dot(const float* a, const float* b, std::size_t n) {
    float32x4_t acc = vdupq_n_f32(0.0f);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
      acc = vfmaq_f32(acc, vld1q_f32(a + i), vld1q_f32(b + i));
    }
    float sum = vaddvq_f32(acc);
    for (; i < n; ++i) sum += a[i] * b[i];
    return sum;
  }

  static double dot(const double* a, const double* b, std::size_t n) {
    float64x2_t acc = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
      acc = vfmaq_f64(acc, vld1q_f64(a + i), vld1q_f64(b + i));
    }
    double sum = vaddvq_f64(acc);
    for (; i < n; ++i) sum += a[i] * b[i];
    return sum;
  }

  static void axpy(float alpha, const float* x, float* y, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
      vst1q_f32(y + i, vfmaq_n_f32(vld1q_f32(y + i), vld1q_f32(x + i), alpha));
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
  }

  static void axpy(double alpha, const double* x, double* y, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
      vst1q_f64(y + i, vfmaq_n_f64(vld1q_f64(y + i), vld1q_f64(x + i), alpha));
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
  }
};

template <typename T>
T dot_fn(const T* a, const T* b, std::size_t n) {
  return NeonOps::dot(a, b, n);
}

template <typename T>
void axpy_fn(T alpha, const T* x, T* y, std::size_t n) {
  NeonOps::axpy(alpha, x, y, n);
}

}  // namespace

const KernelTable<float>& neon_table_f32() {
  static const KernelTable<float> table{
      &dot_fn<float>,
      &axpy_fn<float>,
      &detail::gemm_nn<NeonOps, float>,
      &detail::gemm_nt<NeonOps, float>,
      &detail::gemm_tn<NeonOps, float>,
  };
  return table;
}

const KernelTable<double>& neon_table_f64() {
  static const KernelTable<double> table{
      &dot_fn<double>,
      &axpy_fn<double>,
      &detail::gemm_nn<NeonOps, double>,
      &detail::gemm_nt<NeonOps, double>,
      &detail::gemm_tn<NeonOps, double>,
  };
  return table;
}

}  // namespace lfuse::kernels
