// Compiled with -mavx2 -mfma. Nothing from the standard library is
// instantiated here so no AVX code can leak into shared inline symbols.
#include <immintrin.h>

#include "gemm_impl.hpp"
#include "lfuse/kernels.hpp"

namespace lfuse::kernels {
namespace {

inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  __m128 shuf = _mm_movehdup_ps(lo);
  __m128 sums = _mm_add_ps(lo, shuf);
  shuf = _mm_movehl_ps(shuf, sums);
  sums = _mm_add_ss(sums, shuf);
  return _mm_cvtss_f32(sums);
}

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d high64 = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, high64));
}

struct Avx2Ops {
  static float dot(const float* a, const float* b, std::size_t n) {
    __m256 acc = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
      acc = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc);
    }
    float sum = hsum(acc);
    for (; i < n; ++i) sum += a[i] * b[i];
    return sum;
  }

  static double dot(const double* a, const double* b, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
      acc = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc);
    }
    double sum = hsum(acc);
    for (; i < n; ++i) sum += a[i] * b[i];
    return sum;
  }

  static void axpy(float alpha, const float* x, float* y, std::size_t n) {
    const __m256 va = _mm256_set1_ps(alpha);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
      __m256 vy = _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i));
      _mm256_storeu_ps(y + i, vy);
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
  }

  static void axpy(double alpha, const double* x, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
      __m256d vy = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i));
      _mm256_storeu_pd(y + i, vy);
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
  }
};

template <typename T>
T dot_fn(const T* a, const T* b, std::size_t n) {
  return Avx2Ops::dot(a, b, n);
}

template <typename T>
void axpy_fn(T alpha, const T* x, T* y, std::size_t n) {
  Avx2Ops::axpy(alpha, x, y, n);
}

}  // namespace

const KernelTable<float>& avx2_table_f32() {
  static const KernelTable<float> table{
      &dot_fn<float>,
      &axpy_fn<float>,
      &detail::gemm_nn<Avx2Ops, float>,
      &detail::gemm_nt<Avx2Ops, float>,
      &detail::gemm_tn<Avx2Ops, float>,
  };
  return table;
}

const KernelTable<double>& avx2_table_f64() {
  static const KernelTable<double> table{
      &dot_fn<double>,
      &axpy_fn<double>,
      &detail::gemm_nn<Avx2Ops, double>,
      &detail::gemm_nt<Avx2Ops, double>,
      &detail::gemm_tn<Avx2Ops, double>,
  };
  return table;
}

}  // namespace lfuse::kernels
