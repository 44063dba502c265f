#pragma once

#include <cstddef>
#include <string_view>

// Dense inner-loop kernels. Each backend provides the same table; the scalar
// table is the reference the vector variants are tested against.

namespace lfuse::kernels {

enum class Backend { kScalar, kAvx2, kNeon };

template <typename T>
struct KernelTable {
  T (*dot)(const T* a, const T* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(T alpha, const T* x, T* y, std::size_t n);
  // C[m x n] += A[m x k] * B[k x n]
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const T* a,
                  const T* b, T* c);
  // C[m x n] += A[m x k] * B[n x k]^T
  void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const T* a,
                  const T* b, T* c);
  // C[m x n] += A[k x m]^T * B[k x n]
  void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k, const T* a,
                  const T* b, T* c);
};

bool backend_supported(Backend backend);

// Picked on first use: LFUSE_KERNELS env override if set, else the widest
// backend the CPU reports.
Backend active_backend();

// Throws ConfigError if the backend is not supported on this CPU/build.
void set_backend(Backend backend);

Backend parse_backend(std::string_view name);
std::string_view backend_name(Backend backend);

template <typename T>
const KernelTable<T>& table_for(Backend backend);

template <>
const KernelTable<float>& table_for<float>(Backend backend);
template <>
const KernelTable<double>& table_for<double>(Backend backend);

template <typename T>
const KernelTable<T>& table() {
  return table_for<T>(active_backend());
}

// Per-backend entry points. Only those compiled into the build are defined.
const KernelTable<float>& scalar_table_f32();
const KernelTable<double>& scalar_table_f64();
const KernelTable<float>& avx2_table_f32();
const KernelTable<double>& avx2_table_f64();
const KernelTable<float>& neon_table_f32();
const KernelTable<double>& neon_table_f64();

}  // namespace lfuse::kernels
