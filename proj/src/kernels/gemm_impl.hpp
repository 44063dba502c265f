#pragma once

#include <cstddef>

// Loop nests shared by every backend. `Ops` supplies inline dot/axpy; each
// backend instantiates these in its own translation unit so the vector code
// is compiled with that unit's target flags.

namespace lfuse::kernels::detail {

template <typename Ops, typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a,
             const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      Ops::axpy(arow[p], b + p * n, crow, n);
    }
  }
}

template <typename Ops, typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a,
             const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      crow[j] += Ops::dot(arow, b + j * k, k);
    }
  }
}

template <typename Ops, typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a,
             const T* b, T* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const T* arow = a + p * m;
    const T* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      Ops::axpy(arow[i], brow, c + i * n, n);
    }
  }
}

}  // namespace lfuse::kernels::detail
